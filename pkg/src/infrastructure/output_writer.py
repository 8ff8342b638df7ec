"""
Run Output Persistence
CSV・マニフェストのアトミック書き込み

Every file is written to a temporary sibling and moved into place with
os.replace, so a reader never sees a half-written table. CSV floats use
"%.17g" which round-trips IEEE doubles exactly.
"""

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import pandas as pd
from tenacity import RetryError, retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from ..core.errors import OutputWriteError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
MANIFEST_NAME = "manifest.json"


def sha256_file(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


@retry(
    stop=stop_after_attempt(3),
    wait=wait_exponential(multiplier=0.1, min=0.1, max=2),
    retry=retry_if_exception_type(OSError),
)
def _atomic_write(path: Path, write: Callable[[Any], None], mode: str = "w") -> None:
    """一時ファイル経由の書き込み（リトライ付き）"""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        kwargs = {"encoding": "utf-8", "newline": ""} if "b" not in mode else {}
        with os.fdopen(fd, mode, **kwargs) as handle:
            write(handle)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class RunManifest:
    """実行マニフェスト"""
    scenario: str
    config: Dict[str, Any]
    artifact_version: str
    started_at: str
    finished_at: Optional[str] = None
    status: str = "running"
    outputs: Dict[str, str] = field(default_factory=dict)
    error: Optional[Dict[str, str]] = None
    performance: Dict[str, Any] = field(default_factory=dict)
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @staticmethod
    def now() -> str:
        return datetime.now(timezone.utc).isoformat()

    def record_error(self, error: BaseException, module: Optional[str] = None) -> None:
        self.status = "failed"
        self.error = {
            "type": type(error).__name__,
            "module": module or type(error).__module__,
            "message": str(error),
        }

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class OutputWriter:
    """出力ディレクトリの単独所有ライター"""

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)
        self.written: List[Path] = []

    def write_table(self, name: str, frame: pd.DataFrame) -> Path:
        """CSV with a fixed column order and full float precision."""
        path = self.directory / name

        def write(handle):
            frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")

        self._write(path, write)
        logger.debug(f"💾 Wrote {path} ({len(frame)} rows)")
        return path

    def write_columns(self, name: str, columns: Dict[str, Any]) -> Path:
        return self.write_table(name, pd.DataFrame(columns))

    def write_manifest(self, manifest: RunManifest) -> Path:
        manifest.outputs = {p.name: sha256_file(p) for p in self.written if p.name != MANIFEST_NAME}
        path = self.directory / MANIFEST_NAME

        def write(handle):
            json.dump(manifest.to_dict(), handle, indent=2, ensure_ascii=False, sort_keys=True, default=str)
            handle.write("\n")

        self._write(path, write, record=False)
        logger.info(f"📋 Manifest written: {path} ({len(manifest.outputs)} outputs, status={manifest.status})")
        return path

    def _write(self, path: Path, write: Callable[[Any], None], record: bool = True) -> None:
        try:
            _atomic_write(path, write)
        except (RetryError, OSError) as e:
            raise OutputWriteError(f"failed to write {path}: {e}") from e
        if record and path not in self.written:
            self.written.append(path)
