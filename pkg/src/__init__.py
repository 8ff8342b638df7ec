# Lattice Clock Toolkit
# パッケージ初期化
