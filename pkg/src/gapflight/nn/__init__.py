from .checkpoint import load_checkpoint, load_params, params_to_arrays, save_checkpoint
from .gru import GRU
from .heads import GaussianHead, ValueHead
from .layers import MLP, Conv2d, ConvEncoder, Linear, Module, Param, PointEncoder, Relu, Tanh
from .optim import Adam, clip_grad_norm
from .policies import PixelActorCritic, StudentPolicy, TeacherPolicy
