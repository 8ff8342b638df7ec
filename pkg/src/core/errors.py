"""
Lattice Clock Simulation Errors
例外階層モジュール
"""

from typing import Any, Dict, List, Optional, Tuple


class LatticeClockError(Exception):
    """シミュレーション基本エラー"""
    pass


class GeometryError(LatticeClockError, ValueError):
    """配置・カーネル定義域エラー"""
    pass


class CouplingMatrixError(LatticeClockError):
    """結合行列の物理性エラー（非半正定値など）"""
    pass


class ManifoldError(LatticeClockError, ValueError):
    """励起数多様体の範囲エラー"""
    pass


class DimensionMismatchError(LatticeClockError, ValueError):
    """次元不一致エラー"""
    pass


class UnsupportedGeometryError(LatticeClockError):
    """非対応ジオメトリ"""
    pass


class EigensolverError(LatticeClockError):
    """固有値ソルバー失敗"""

    def __init__(self, message: str, manifold: Optional[int] = None):
        self.manifold = manifold
        label = f" [m_ex={manifold}]" if manifold is not None else ""
        super().__init__(f"{message}{label}")


class DegeneracyError(LatticeClockError):
    """Liouvillian固有値の縮退エラー"""

    def __init__(self, message: str, sectors: Optional[List[Tuple[int, ...]]] = None):
        self.sectors = sectors or []
        super().__init__(f"{message} (colliding sectors: {self.sectors})")


class IntegrationError(LatticeClockError):
    """時間発展積分エラー"""

    def __init__(self, message: str, manifold: Optional[int] = None, context: Optional[Dict[str, Any]] = None):
        self.manifold = manifold
        self.context = context or {}
        label = f" [m_ex={manifold}]" if manifold is not None else ""
        super().__init__(f"{message}{label}")


class RefinementError(LatticeClockError):
    """フリンジ探索の格子不足"""
    pass


class InsufficientEnsembleError(LatticeClockError):
    """軌跡数不足"""
    pass


class CompressionError(LatticeClockError):
    """MPS圧縮エラー（部分結果付き）"""

    def __init__(self, message: str, partial: Any = None):
        self.partial = partial
        super().__init__(message)


class FitError(LatticeClockError, ValueError):
    """スケーリングフィットの入力エラー"""
    pass


class ConfigValidationError(LatticeClockError):
    """実験設定スキーマ違反"""

    def __init__(self, message: str, report: Any = None):
        self.report = report
        super().__init__(message)


class OutputWriteError(LatticeClockError):
    """出力書き込みエラー"""
    pass


class RateModelError(LatticeClockError):
    """レートモデルの不整合（減衰率ゼロの占有状態など）"""
    pass


class ConfigReadError(LatticeClockError, OSError):
    """設定ファイル読み込みエラー"""
    pass
