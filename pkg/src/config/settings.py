"""全局配置与常量定义。"""

import math

# 项目版本（写入运行清单）
APP_VERSION: str = "0.1.0"

# 日志级别环境变量
LOG_ENV_VAR: str = "SPARSETEMP_LOG"
LOG_LEVELS: dict[str, str] = {"error": "ERROR", "info": "INFO", "debug": "DEBUG"}
DEFAULT_LOG_LEVEL: str = "info"

# ==================== 温度与 sn-softmax ====================

DEFAULT_T0: float = 1.0  # 初始温度
DEFAULT_TN: float = 1e-3  # 目标温度
DEFAULT_N_POINTS: int = 4  # 衰减点数量 N（列表长度 N+1）
DEFAULT_CYCLES: int = 3  # PCD/LPCD 周期数
DEFAULT_LAMBDA: float = 0.06  # EDD 强度 λ
EDD_RHO: float = 0.5  # EDD 动量，只读
DEFAULT_WARMUP: int = 5  # 预热 epoch 数

DEFAULT_S: float = 100.0  # 固定 s 策略的默认值
DEFAULT_ST_CONST: float = 1.0  # st≡c 策略的默认常数
S_MAX: float = 1e6  # s·t 上限

# 架构参数初始化尺度（A ~ 1e-3·N(0,1)）
ARCH_INIT_SCALE: float = 1e-3
# 全部参数非正时 E(a) 的解析回退值：init_scale·φ(0)
ANALYTIC_E_A: float = ARCH_INIT_SCALE / math.sqrt(2.0 * math.pi)

# ==================== 搜索空间 ====================

DEFAULT_NODES: int = 3
DEFAULT_INPUT_NODES: int = 1
DEFAULT_DIM: int = 16
DEFAULT_CLASSES: int = 4
OP_CATALOG: tuple[str, ...] = ("none", "skip_connect", "linear", "tanh_linear", "scale_half")
ZERO_OP: str = "none"
DEFAULT_EXCLUDE_ZERO: bool = False

# ==================== 数据 ====================

DEFAULT_TASK: str = "blobs"
DEFAULT_SAMPLES: int = 2000
DEFAULT_NOISE_SIGMA: float = 1.0
BLOB_CENTER_SCALE: float = 2.0  # 类中心 = 2.0·e_c

PLANTED_NONLINEAR_EDGE: tuple[int, int] = (0, 2)  # 种植任务的非线性边
PLANTED_TANH_GAIN: float = 4.0  # 种植 tanh 权重 W = -κ·I
PLANTED_OP_GAIN: float = 1.5  # 标签网络非种植算子的权重放大系数
PLANTED_MIN_ACCURACY: float = 0.95
PLANTED_MAX_OTHER_ACCURACY: float = 0.80
PLANTED_MIN_MARGIN: float = 0.15
PLANTED_MAX_ATTEMPTS: int = 8
PLANTED_CACHE_SIZE: int = 8  # 种植任务缓存容量（FIFO）

# 线性探针（读出层重训练）配置
PROBE_STEPS: int = 400
PROBE_LR: float = 0.5
PLANTED_PROBE_STEPS: int = 1500  # 种植任务穷举校验时的探针步数
PLANTED_PROBE_LR: float = 2.0

# ==================== 双层优化 ====================

DEFAULT_EPOCHS: int = 60
DEFAULT_STEPS_PER_EPOCH: int = 10
DEFAULT_BATCH_SIZE: int = 100
DEFAULT_LR_OMEGA: float = 0.05
DEFAULT_LR_ARCH: float = 0.01
DEFAULT_GRAD_CLIP_ARCH: float = 0.0  # 0 表示不裁剪；EDD(clip) 变体取 1
DEFAULT_SOFTMAX_MODE: str = "sn_st_const"

# 多种子扫描线程池大小（建议 1-4）
SWEEP_WORKER_THREADS: int = 2

# ==================== 输出 ====================

CSV_FLOAT_FORMAT: str = ".17g"  # 17 位有效数字
PROBE_GRID_POINTS: int = 50
PROBE_T_MAX: float = 1.0
PROBE_T_MIN: float = 1e-3
