"""Flat op-table layout shared by the compiled and numpy inference engines.

Each row of an op table is ``N_COLS`` integers. Offsets are in elements
(not bytes) into either the arena or the weight vector; ``-1`` means unused.
"""

OP_SEPCONV = 1
OP_CONV1X1 = 2
OP_AFFINE = 3
OP_RELU = 4
OP_MAXPOOL = 5
OP_AVGPOOL = 6
OP_ADD = 7
OP_GAP = 8
OP_DENSE_SOFTMAX = 9

OP_NAMES = {
    OP_SEPCONV: "sepconv",
    OP_CONV1X1: "conv1x1",
    OP_AFFINE: "affine",
    OP_RELU: "relu",
    OP_MAXPOOL: "maxpool",
    OP_AVGPOOL: "avgpool",
    OP_ADD: "add",
    OP_GAP: "global_avg_pool",
    OP_DENSE_SOFTMAX: "dense_softmax",
}

# column indices
KIND = 0
L_IN = 1
C_IN = 2
L_OUT = 3
C_OUT = 4
K = 5
IN = 6  # arena offset of the (main) input
OUT = 7  # arena offset of the output
AUX = 8  # arena offset of the second operand (residual add)
W = 9  # weights: depthwise taps / 1x1 / dense matrix / affine scale
W2 = 10  # pointwise matrix / affine shift
B = 11  # bias
SCR1 = 12  # scratch: depthwise output (L_IN x C_IN)
SCR2 = 13  # scratch: padded input + tap product (numpy engine only)
N_COLS = 14
