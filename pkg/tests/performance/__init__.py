# Performance / Acceptance Tests Package
