# Lattice Clock Toolkit Tests
# テストパッケージ初期化
