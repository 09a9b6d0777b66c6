import dataclasses
from dataclasses import dataclass, field
from typing import Any, Dict

from ..ode.solvers import SolverConfig
from ..utils.errors import ConfigError

__all__ = ['ModelConfig', 'RHS_KINDS', 'REFINERS']

RHS_KINDS = ('transformer', 'gru_ode')
REFINERS = ('none', 'gru', 'ode')


@dataclass
class ModelConfig:
    downsample: int = 8
    feature_dim: int = 32
    d_inp: int = 32
    d_hid: int = 32
    d_out: int = 32
    encoder_width: int = 32
    corr_levels: int = 4
    corr_radius: int = 3
    match_temperature: float = 1.0
    mixing_depth: int = 2
    mixing_kernel: int = 5
    rhs_kind: str = 'transformer'
    gru_iterations: int = 4
    decoder_zero_init: bool = True
    rhs_zero_init: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.downsample < 1 or self.downsample & (self.downsample - 1):
            raise ConfigError(f'downsample must be a power of two, got {self.downsample}')
        # the latent is the ODE state, so every latent width agrees
        if not self.d_inp == self.d_out == self.d_hid:
            raise ConfigError(f'd_inp, d_hid and d_out must agree, got {self.d_inp}, {self.d_hid}, {self.d_out}')
        if self.mixing_depth not in (1, 2):
            raise ConfigError(f'mixing_depth must be 1 or 2, got {self.mixing_depth}')
        if self.mixing_kernel % 2 != 1:
            raise ConfigError(f'mixing_kernel must be odd, got {self.mixing_kernel}')
        if self.rhs_kind not in RHS_KINDS:
            raise ConfigError(f'Unknown rhs_kind = "{self.rhs_kind}"')
        if self.corr_levels < 1 or self.corr_radius < 0:
            raise ConfigError(f'invalid correlation levels={self.corr_levels} / radius={self.corr_radius}')
        if self.gru_iterations < 1:
            raise ConfigError(f'gru_iterations must be >= 1, got {self.gru_iterations}')
        if isinstance(self.solver, dict):
            self.solver = SolverConfig(**self.solver)

    @property
    def corr_channels(self) -> int:
        return self.corr_levels * (2 * self.corr_radius + 1) ** 2

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'ModelConfig':
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - names
        if unknown:
            raise ConfigError(f'unknown model keys {sorted(unknown)}')
        return cls(**values)

    @classmethod
    def from_cfg(cls, model_cfg, solver_cfg) -> 'ModelConfig':
        values = {k: v for k, v in model_cfg.items() if k != 'target'}
        values['solver'] = SolverConfig.from_cfg(solver_cfg)
        return cls.from_dict(values)
