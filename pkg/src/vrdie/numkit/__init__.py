from .tensor import (ContractError, ShapeError, Tensor, add, argmax_rowwise, as_tensor, concat,
                     embedding_lookup, exp, grad_enabled, layer_normalize, log, log_softmax,
                     log_sum_exp, lstm_cell, matmul, max_pool_1d, mean, mul, neg, no_grad, parameter,
                     relu, reshape, sigmoid, slice_, softmax_rowwise, stack, sum_, take, tanh,
                     transpose, where, zero_grads)
from .gradcheck import check_gradients, finite_difference_gradient, relative_error
from .nn import BiLSTM, Conv1d, Conv2d, LSTM, Linear, ParamStore, linear, reverse_padded
from . import checkpoint
