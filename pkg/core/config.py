# core/config.py
"""
Конфигурация запуска: текстовый файл с секциями [task], [model], [cam], [grid],
[optim], [train], [io] и строками "key = value". Значения по умолчанию зависят
от вида задачи и берутся из settings (CAM_*). Неизвестные ключи - ошибка.
"""
import dataclasses
import logging
import re
from dataclasses import dataclass
from pathlib import Path

from django.conf import settings

from .cam import FEATURE_RANKS
from .exceptions import ConfigError
from .forms import SECTION_FORMS

logger = logging.getLogger(__name__)

SECTION_ORDER = ('task', 'model', 'cam', 'grid', 'optim', 'train', 'io')
IMAGE_TASKS = ('image-regression', 'image-generalization')
INLINE_COMMENT = re.compile(r'(?:^|\s)#')


@dataclass(frozen=True)
class TaskConfig:
    kind: str
    image: str = ''
    samples: int = 1024
    rays: int = 64
    points_per_ray: int = 8
    frames: int = 8
    plane_size: int = 8


@dataclass(frozen=True)
class ModelConfig:
    depth: int
    width: int
    encoding: str
    gaussian_scale: float
    num_frequencies: int
    include_input: bool
    head: str
    max_octave: float = None


@dataclass(frozen=True)
class CamConfig:
    enabled: bool
    placements: tuple
    mode: str
    normalize: bool
    eps: float
    selector: tuple = None
    norm_axes: tuple = None


@dataclass(frozen=True)
class GridConfig:
    resolution: tuple
    channels: int


@dataclass(frozen=True)
class OptimConfig:
    lr_network: float
    lr_grid: float
    milestones: tuple
    factor: float


@dataclass(frozen=True)
class TrainLoopConfig:
    iterations: int
    batch_size: int
    seed: int
    log_every: int


@dataclass(frozen=True)
class IoConfig:
    output: str = ''
    bits: int = 32


@dataclass(frozen=True)
class TrainConfig:
    task: TaskConfig
    model: ModelConfig
    cam: CamConfig
    grid: GridConfig
    optim: OptimConfig
    train: TrainLoopConfig
    io: IoConfig

    def replace(self, section, **changes):
        """Копия с измененными полями одной секции (для флагов --seed, --out, --bits)."""
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})

    def variant(self, name):
        """baseline / cam-n / cam - три варианта абляции нормализации."""
        if name == 'baseline':
            return self.replace('cam', enabled=False)
        if name == 'cam-n':
            return self.replace('cam', enabled=True, normalize=False)
        if name == 'cam':
            return self.replace('cam', enabled=True, normalize=True)
        raise ValueError(f"Unknown variant '{name}'")

    def as_dict(self):
        return dataclasses.asdict(self)


def task_defaults(kind):
    """Значения по умолчанию для вида задачи, в строковом виде (как в файле)."""
    image_like = kind in IMAGE_TASKS
    defaults = {
        'task': {'kind': kind, 'image': '', 'samples': '1024', 'rays': '64', 'points_per_ray': '8',
                 'frames': '8', 'plane_size': '8'},
        'model': {'depth': '4', 'width': '256' if image_like else '64', 'encoding': 'none',
                  'gaussian_scale': '10.0', 'num_frequencies': '256', 'include_input': 'false', 'max_octave': 'auto',
                  'head': 'sigmoid' if image_like else 'identity'},
        'cam': {'enabled': 'true', 'placements': '', 'mode': 'scalar', 'normalize': 'true',
                'eps': repr(settings.CAM_EPS), 'selector': 'auto', 'norm_axes': 'auto'},
        'grid': {'resolution': '32, 32', 'channels': '1'},
        'optim': {'lr_network': repr(settings.CAM_LR_NETWORK), 'lr_grid': repr(settings.CAM_LR_GRID),
                  'milestones': ', '.join(str(m) for m in settings.CAM_LR_MILESTONES),
                  'factor': repr(settings.CAM_LR_FACTOR)},
        'train': {'iterations': '2000', 'batch_size': str(settings.CAM_IMAGE_BATCH_SIZE), 'seed': '0',
                  'log_every': str(settings.CAM_LOG_EVERY)},
        'io': {'output': '', 'bits': '32'},
    }
    # CAM по умолчанию стоит на последнем скрытом слое
    defaults['cam']['placements'] = str(int(defaults['model']['depth']) - 2)

    if kind == 'signal1d':
        # 16 частот с потолком 2^4 π (8 периодов на [0, 1]) - ниже основной полосы сигнала
        defaults['model'].update({'encoding': 'positional', 'num_frequencies': '16', 'include_input': 'true',
                                  'max_octave': '4'})
        defaults['grid']['resolution'] = '64'
        defaults['optim']['milestones'] = ''
        defaults['train'].update({'iterations': '1500', 'batch_size': '0'})
    elif image_like:
        defaults['model']['encoding'] = 'fourier'
    elif kind == 'synthetic-ray':
        defaults['model'].update({'depth': '2', 'width': '16'})
        defaults['cam'].update({'mode': 'ray', 'placements': '0'})
        # d_φ x d_θ
        defaults['grid']['resolution'] = '3, 10'
        defaults['optim']['milestones'] = ''
        defaults['train'].update({'iterations': '200', 'batch_size': '0', 'log_every': '20'})
    elif kind == 'synthetic-video-tensor':
        defaults['model'].update({'depth': '2', 'width': '8'})
        defaults['cam'].update({'mode': 'channel', 'placements': '0'})
        defaults['grid'].update({'resolution': '10', 'channels': '8'})
        defaults['optim']['milestones'] = ''
        defaults['train'].update({'iterations': '200', 'batch_size': '0', 'log_every': '20'})
    return defaults


def _tokenize(text):
    """
    Разбирает текст на {секция: {ключ: (значение, номер строки)}} и номера строк заголовков.
    """
    sections, headers = {}, {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        # '#' - комментарий в начале строки или после пробела; 'a#b' остается значением
        line = INLINE_COMMENT.split(raw, maxsplit=1)[0].strip()
        if not line or line.startswith(';'):
            continue
        if line.startswith('[') and line.endswith(']'):
            current = line[1:-1].strip().lower()
            if current not in SECTION_FORMS:
                raise ConfigError(f"unknown section [{current}]", line=lineno)
            if current in sections:
                raise ConfigError(f"duplicate section [{current}]", line=lineno)
            sections[current] = {}
            headers[current] = lineno
            continue
        if '=' not in line:
            raise ConfigError(f"expected 'key = value', got '{line}'", line=lineno)
        if current is None:
            raise ConfigError("key outside of any section", line=lineno)
        key, value = (part.strip() for part in line.split('=', 1))
        key = key.lower()
        if key not in SECTION_FORMS[current].base_fields:
            raise ConfigError(f"unknown key '{key}' in [{current}]", line=lineno)
        if key in sections[current]:
            raise ConfigError(f"duplicate key '{key}' in [{current}]", line=lineno)
        sections[current][key] = (value, lineno)
    return sections, headers


def parse_config(text) -> TrainConfig:
    sections, headers = _tokenize(text)
    task_items = sections.get('task', {})
    if 'kind' not in task_items:
        raise ConfigError("missing required key 'kind' in [task]", line=headers.get('task'))
    kind = task_items['kind'][0]
    if kind not in dict(SECTION_FORMS['task'].base_fields['kind'].choices):
        raise ConfigError(f"unknown task kind '{kind}'", line=task_items['kind'][1])

    defaults = task_defaults(kind)
    depth_item = sections.get('model', {}).get('depth')
    if depth_item and depth_item[0].isdigit() and int(depth_item[0]) >= 2:
        if kind in IMAGE_TASKS or kind == 'signal1d':
            defaults['cam']['placements'] = str(int(depth_item[0]) - 2)
    cleaned = {}
    for section in SECTION_ORDER:
        items = sections.get(section, {})
        data = dict(defaults[section])
        data.update({key: value for key, (value, _) in items.items()})
        form = SECTION_FORMS[section](data=data)
        if not form.is_valid():
            field, errors = next(iter(form.errors.items()))
            line = items[field][1] if field in items else headers.get(section)
            raise ConfigError(f"[{section}] {field}: {' '.join(errors)}", line=line)
        cleaned[section] = form.cleaned_data

    config = TrainConfig(
        task=TaskConfig(**cleaned['task']),
        model=ModelConfig(**cleaned['model']),
        cam=CamConfig(**cleaned['cam']),
        grid=GridConfig(**cleaned['grid']),
        optim=OptimConfig(**cleaned['optim']),
        train=TrainLoopConfig(**cleaned['train']),
        io=IoConfig(**cleaned['io']),
    )
    _validate(config, sections, headers)
    return config


def _line_of(sections, headers, section, key):
    if key in sections.get(section, {}):
        return sections[section][key][1]
    return headers.get(section)


def _validate(config, sections=None, headers=None):
    sections, headers = sections or {}, headers or {}
    kind = config.task.kind
    if kind in IMAGE_TASKS and not config.task.image:
        raise ConfigError(f"task '{kind}' needs 'image' in [task]", line=headers.get('task'))
    hidden = config.model.depth - 1
    bad = [p for p in config.cam.placements if p >= hidden]
    if config.cam.enabled and bad:
        raise ConfigError(f"CAM placements {bad} reference missing hidden layers (0..{hidden - 1})",
                          line=_line_of(sections, headers, 'cam', 'placements'))
    rank = len(config.grid.resolution)
    if config.cam.selector is not None and len(config.cam.selector) != rank:
        raise ConfigError(f"selector has {len(config.cam.selector)} entries but grid rank is {rank}",
                          line=_line_of(sections, headers, 'cam', 'selector'))
    if config.cam.mode == 'ray' and kind != 'synthetic-ray':
        raise ConfigError("ray mode is only available for the synthetic-ray task",
                          line=_line_of(sections, headers, 'cam', 'mode'))
    if config.cam.mode == 'channel' and kind != 'synthetic-video-tensor':
        raise ConfigError("channel mode is only available for the synthetic-video-tensor task",
                          line=_line_of(sections, headers, 'cam', 'mode'))
    if config.cam.norm_axes is not None:
        rank = FEATURE_RANKS[config.cam.mode]
        if any(axis >= rank for axis in config.cam.norm_axes):
            raise ConfigError(f"'{config.cam.mode}' mode normalizes over axes 1..{rank - 1}, "
                              f"got {config.cam.norm_axes}", line=_line_of(sections, headers, 'cam', 'norm_axes'))
    if config.cam.mode != 'channel' and config.grid.channels != 1:
        raise ConfigError("single-channel grids are required outside channel mode",
                          line=_line_of(sections, headers, 'grid', 'channels'))
    if config.task.image and config.io.output:
        if Path(config.task.image).resolve() == Path(config.io.output).resolve():
            raise ConfigError("input image and output directory must differ",
                              line=_line_of(sections, headers, 'io', 'output'))


def _format(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ', '.join(str(v) for v in value)
    if value is None:
        return 'auto'
    return str(value)


def serialize_config(config: TrainConfig) -> str:
    lines = []
    for section in SECTION_ORDER:
        lines.append(f'[{section}]')
        for key, value in dataclasses.asdict(getattr(config, section)).items():
            lines.append(f'{key} = {_format(value)}')
        lines.append('')
    return '\n'.join(lines)


def load_config(path) -> TrainConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    config = parse_config(text)
    logger.info(f"Loaded config {path} (task={config.task.kind}, seed={config.train.seed}).")
    return config
