"""
Pipeline configuration and the flat ``key = value`` text format.
"""

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigurationError
from .io import read_text


ORDERS = 'td-sd', 'sd-td', 'sd', 'td', 'none'
MODELS = 'toy', 'external'
BOOLEANS = {
    'true': True,
    'yes': True,
    '1': True,
    'false': False,
    'no': False,
    '0': False,
}


def normalize_order(order):
    text = str(order).strip().lower()
    text = text.replace('→', '-').replace('->', '-').replace('_', '-')
    text = text.replace(' ', '')
    if text.endswith('-only'):
        text = text[:-len('-only')]
    if text not in ORDERS:
        message = f'Diffusion order "{order}" not recognized. Choose from {ORDERS}'
        raise ConfigurationError(message)
    return text


@dataclass(frozen=True)
class PipelineConfig:
    # Pseudo-label selection
    p: float = 0.2
    bins: int = 4096
    exact_limit: int = 10_000_000
    softmax_tolerance: float = 1e-3
    softmax_check: bool = True
    strict: bool = False

    # Superpixels
    k: int = 500
    mc: float = 10.0
    slic_iters: int = 10

    # Temporal diffusion
    t: float = 0.5
    delta: int = 1
    order: str = 'td-sd'

    # Losses
    alpha_t: float = 1.0
    alpha_spa: float = 0.1
    alpha_tem: float = 5.0
    n_pos: int = 20
    n_neg: int = 1

    # Self-training
    rounds: int = 4
    epochs: int = 10
    pretrain_epochs: int = 0
    learning_rate: float = 1e-4
    batch_size: int = 2
    beta1: float = 0.5
    beta2: float = 0.999
    hidden: int = 16
    feature_stride: int = 4
    model: str = 'toy'

    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'order', normalize_order(self.order))
        object.__setattr__(self, 'model', str(self.model).strip().lower())

    def validate(self):
        if not 0 < self.p <= 1:
            raise ConfigurationError(f'p must be in (0, 1], got {self.p}')
        if not 0 <= self.t <= 1:
            raise ConfigurationError(f'T must be in [0, 1], got {self.t}')
        weights = {
            'alpha_t': self.alpha_t,
            'alpha_spa': self.alpha_spa,
            'alpha_tem': self.alpha_tem,
        }
        for name, weight in weights.items():
            if weight < 0:
                raise ConfigurationError(f'{name} must be non-negative, got {weight}')
        positive = {
            'k': self.k,
            'mc': self.mc,
            'slic_iters': self.slic_iters,
            'bins': self.bins,
            'batch_size': self.batch_size,
            'hidden': self.hidden,
            'feature_stride': self.feature_stride,
            'delta': self.delta,
            'jobs': self.jobs,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigurationError(f'{name} must be positive, got {value}')
        non_negative = {
            'rounds': self.rounds,
            'epochs': self.epochs,
            'pretrain_epochs': self.pretrain_epochs,
            'n_pos': self.n_pos,
            'n_neg': self.n_neg,
            'learning_rate': self.learning_rate,
        }
        for name, value in non_negative.items():
            if value < 0:
                raise ConfigurationError(f'{name} must be non-negative, got {value}')
        for name in 'beta1', 'beta2':
            value = getattr(self, name)
            if not 0 <= value < 1:
                raise ConfigurationError(f'{name} must be in [0, 1), got {value}')
        if self.model not in MODELS:
            raise ConfigurationError(f'Model "{self.model}" not recognized. Choose from {MODELS}')
        return self

    @property
    def prob_options(self):
        """Keyword arguments for reading probability files."""
        return dict(
            check_softmax=self.softmax_check,
            strict=self.strict,
            tolerance=self.softmax_tolerance,
        )

    def replace(self, **kwargs):
        kwargs = {key: value for key, value in kwargs.items() if value is not None}
        return dataclasses.replace(self, **kwargs)

    @classmethod
    def desk_scale(cls, **kwargs):
        """Settings that train the toy model on the synthetic scenes quickly."""
        defaults = dict(
            k=300,
            learning_rate=0.02,
            beta1=0.9,
            pretrain_epochs=20,
            rounds=2,
            epochs=10,
        )
        defaults.update(kwargs)
        return cls(**defaults)


def parse_key_values(text, source='<string>'):
    """Parse ``key = value`` lines into an ordered list of (key, value) pairs."""
    pairs = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            message = f'{source}:{line_number}: expected "key = value", got "{line}"'
            raise ConfigurationError(message)
        key, value = line.split('=', 1)
        pairs.append((key.strip().lower(), value.strip()))
    return pairs


def _coerce(name, value, kind):
    if kind is bool:
        text = str(value).strip().lower()
        if text in BOOLEANS:
            return BOOLEANS[text]
        message = f'Value "{value}" for key "{name}" is not a valid boolean'
        raise ConfigurationError(message)
    try:
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        return str(value)
    except ValueError:
        message = f'Value "{value}" for key "{name}" is not a valid {kind.__name__}'
        raise ConfigurationError(message) from None


def config_from_pairs(pairs, base=None):
    base = PipelineConfig() if base is None else base
    kinds = {f.name: f.type for f in dataclasses.fields(base)}
    values = {}
    for key, value in pairs:
        if key not in kinds:
            raise ConfigurationError(f'Unknown configuration key "{key}"')
        values[key] = _coerce(key, value, kinds[key])
    return dataclasses.replace(base, **values)


def read_config(path):
    path = Path(path)
    pairs = parse_key_values(read_text(path), source=str(path))
    return config_from_pairs(pairs).validate()


def write_config(config, path):
    lines = [f'{f.name} = {getattr(config, f.name)}' for f in dataclasses.fields(config)]
    Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')
