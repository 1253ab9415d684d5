# core/tasks.py
"""
Задачи обучения: 1D сумма синусоид, регрессия и обобщение изображения,
синтетические лучи (режим ray) и синтетический 4D тензор (режим channel).
Здесь же цикл обучения (forward -> MSE -> backward -> Adam -> расписание) и метрики.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from django.conf import settings
from tqdm import tqdm

from .cam import CamLayer, priority_selector
from .exceptions import NonFiniteError, ShapeError
from .images import load_image
from .nn import build_model, init_linear
from .optim import Adam, StepSchedule
from .tensor import Tensor, backward, no_grad, recording

logger = logging.getLogger(__name__)

NUM_TERMS = 10
SIGNAL_FREQUENCIES = tuple(range(5, 55, 5)) # k_i из {5, 10, ..., 50}


# --- Метрики ---

def mse(pred, target):
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError("prediction and target shapes differ", pred.shape, target.shape)
    return float(np.mean((pred - target) ** 2))


def psnr(pred, target, peak=1.0):
    """10 log10(peak² / MSE); при MSE == 0 - settings.CAM_PSNR_INFINITE."""
    error = mse(pred, target)
    if error == 0.0:
        return settings.CAM_PSNR_INFINITE
    return 10.0 * math.log10(peak * peak / error)


def mse_loss(pred: Tensor, target) -> Tensor:
    return (pred - Tensor(target)).square().mean()


# --- 1D сигнал ---

@dataclass(frozen=True)
class Signal1DSpec:
    frequencies: tuple
    phases: tuple
    samples: int = 1024
    seed: int = 0


def make_signal1d(seed, samples=1024) -> Signal1DSpec:
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=NUM_TERMS)
    return Signal1DSpec(SIGNAL_FREQUENCIES, tuple(float(p) for p in phases), samples, seed)


def eval_signal1d(spec: Signal1DSpec, x):
    """f(x) = sum_i sin(2π k_i x + φ_i), |f| <= 10."""
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(spec.frequencies, dtype=np.float64)
    phases = np.asarray(spec.phases, dtype=np.float64)
    return np.sin(2.0 * math.pi * x[..., None] * k + phases).sum(axis=-1)


# --- Изображения ---

def pixel_coords(height, width):
    """Пиксель (r, c) -> ((c + 0.5) / W, (r + 0.5) / H), построчно."""
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing='ij')
    return np.stack([(cols + 0.5) / width, (rows + 0.5) / height], axis=-1).reshape(-1, 2)


@dataclass
class ImageDataset:
    pixels: np.ndarray # [H x W x 3] в [0, 1]
    coords: np.ndarray # [HW x 2]
    targets: np.ndarray # [HW x 3]

    @classmethod
    def from_array(cls, pixels):
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ShapeError("image dataset expects [H x W x 3] pixels", pixels.shape)
        height, width = pixels.shape[:2]
        return cls(pixels, pixel_coords(height, width), pixels.reshape(-1, 3))

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def __len__(self):
        return self.coords.shape[0]


def split_generalization(pixels):
    """Обучение на пикселях с четными (r, c) и координатах половинной решетки, оценка - на всем изображении."""
    pixels = np.asarray(pixels, dtype=np.float64)
    height, width = pixels.shape[:2]
    if height % 2 or width % 2:
        raise ShapeError("generalization split needs even image dimensions", pixels.shape)
    return ImageDataset.from_array(pixels[::2, ::2]), ImageDataset.from_array(pixels)


def checkerboard(size, cell=1):
    """Шахматная доска [size x size x 3]; при cell=1 вся энергия на частоте Найквиста."""
    rows, cols = np.indices((size, size))
    board = ((rows // cell + cols // cell) % 2).astype(np.float64)
    return np.repeat(board[..., None], 3, axis=2)


def bandlimited_noise(size, cutoff=0.25, seed=0):
    """Шум с энергией только на частотах |u|, |v| <= cutoff * size / 2, приведенный к [0, 1]."""
    rng = np.random.default_rng(seed)
    spectrum = np.fft.fft2(rng.normal(size=(size, size)))
    freqs = np.abs(np.fft.fftfreq(size)) * 2.0
    mask = (freqs[:, None] <= cutoff) & (freqs[None, :] <= cutoff)
    image = np.real(np.fft.ifft2(spectrum * mask))
    image = (image - image.min()) / max(image.max() - image.min(), 1e-12)
    return np.repeat(image[..., None], 3, axis=2)


# --- Пробные модели для синтетических тензоров ---

class RayProbe:
    """Точки луча -> linear -> CAM(ray) по (φ, θ) -> relu -> linear."""

    def __init__(self, width, cam, grid, seed=0, layout=None):
        self.encode = init_linear(3, width, seed=seed + 1)
        selector = cam.selector if cam.selector is not None else priority_selector(layout)
        self.cam = CamLayer('ray', width, grid.resolution, selector=selector, normalize=cam.normalize,
                            norm_axes=cam.norm_axes,
                            eps=cam.eps, name='cam0') if cam.enabled else None
        self.head = init_linear(width, 1, seed=seed + 2)

    def parameters(self):
        yield from ((f'encode.{n}', t, 'network') for n, t in self.encode.parameters())
        if self.cam is not None:
            yield from ((f'cam0.{n}', t, 'grid') for n, t in self.cam.parameters())
        yield from ((f'head.{n}', t, 'network') for n, t in self.head.parameters())

    @property
    def cam_layers(self):
        return [self.cam] if self.cam is not None else []

    def forward(self, points, coords, capture=False):
        h = self.encode(Tensor(points))
        if self.cam is not None:
            h = self.cam(h, coords)
        hidden = h.relu()
        out = self.head(hidden)
        return (out, [hidden]) if capture else out


class VideoProbe:
    """Кадровый признак [N x C x H x W] -> CAM(channel) по t -> поканальное смешивание 1x1."""

    def __init__(self, width, cam, grid, seed=0):
        self.cam = CamLayer('channel', width, grid.resolution, selector=(0,), normalize=cam.normalize,
                            norm_axes=cam.norm_axes,
                            eps=cam.eps, grid_channels=grid.channels, name='cam0') if cam.enabled else None
        self.mix = init_linear(width, width, seed=seed + 1)

    def parameters(self):
        if self.cam is not None:
            yield from ((f'cam0.{n}', t, 'grid') for n, t in self.cam.parameters())
        yield from ((f'mix.{n}', t, 'network') for n, t in self.mix.parameters())

    @property
    def cam_layers(self):
        return [self.cam] if self.cam is not None else []

    def forward(self, features, coords, capture=False):
        h = Tensor(features)
        if self.cam is not None:
            h = self.cam(h, coords)
        # [N, C, H, W] -> [N, H, W, C] -> смешивание каналов -> обратно
        out = self.mix(h.transpose(0, 2, 3, 1)).transpose(0, 3, 1, 2)
        return (out, [h]) if capture else out


# --- Задачи ---

@dataclass
class Batch:
    coords: np.ndarray
    targets: np.ndarray
    inputs: np.ndarray = None # признаки для синтетических задач


class Task:
    kind = None
    coordinate_layout = ()
    # Ось каналов у захваченных признаков ([N x C x H x W] у видео)
    feature_channel_axis = -1
    peak = 1.0

    def __init__(self, config):
        self.config = config

    @property
    def train_size(self):
        return len(self.train_batch().targets)

    def build_model(self):
        return build_model(self.config.model, self.config.cam, self.config.grid,
                           in_dim=len(self.coordinate_layout), out_dim=self.out_dim,
                           seed=self.config.train.seed, coordinate_layout=self.coordinate_layout)

    def train_batch(self, indices=None) -> Batch:
        raise NotImplementedError

    def eval_batch(self, indices=None) -> Batch:
        return self.train_batch(indices)

    def eval_size(self):
        return len(self.eval_batch().targets)

    def predict(self, model, batch: Batch, capture=False):
        return model.forward(batch.coords, capture=capture)

    def sample_indices(self, rng, batch_size):
        n = self.train_size
        if batch_size <= 0 or batch_size >= n:
            return None
        return rng.choice(n, size=batch_size, replace=False)


class Signal1DTask(Task):
    kind = 'signal1d'
    coordinate_layout = ('x',)
    out_dim = 1

    def __init__(self, config):
        super().__init__(config)
        self.spec = make_signal1d(config.train.seed, config.task.samples)
        self.coords = np.linspace(0.0, 1.0, self.spec.samples)[:, None]
        self.targets = eval_signal1d(self.spec, self.coords[:, 0])[:, None]
        # Пик для PSNR - размах сигнала
        self.peak = float(self.targets.max() - self.targets.min())

    def train_batch(self, indices=None):
        if indices is None:
            return Batch(self.coords, self.targets)
        return Batch(self.coords[indices], self.targets[indices])


class ImageTask(Task):
    coordinate_layout = ('x', 'y')
    out_dim = 3

    def __init__(self, config, pixels=None):
        super().__init__(config)
        self.kind = config.task.kind
        pixels = load_image(config.task.image) if pixels is None else np.asarray(pixels, dtype=np.float64)
        if self.kind == 'image-generalization':
            self.train_set, self.eval_set = split_generalization(pixels)
        else:
            self.train_set = self.eval_set = ImageDataset.from_array(pixels)

    def train_batch(self, indices=None):
        data = self.train_set
        if indices is None:
            return Batch(data.coords, data.targets)
        return Batch(data.coords[indices], data.targets[indices])

    def eval_batch(self, indices=None):
        data = self.eval_set
        if indices is None:
            return Batch(data.coords, data.targets)
        return Batch(data.coords[indices], data.targets[indices])


class SyntheticRayTask(Task):
    kind = 'synthetic-ray'
    coordinate_layout = ('x', 'y', 'z', 'phi', 'theta')
    out_dim = 1

    def __init__(self, config):
        super().__init__(config)
        rng = np.random.default_rng(config.train.seed)
        n, s = config.task.rays, config.task.points_per_ray
        self.coords = rng.uniform(0.0, 1.0, size=(n, 5))
        self.points = rng.uniform(0.0, 1.0, size=(n, s, 3))
        phi, theta = self.coords[:, 3:4], self.coords[:, 4:5]
        # Цель зависит от направления взгляда - модуляции есть что выучить
        self.targets = (np.cos(2.0 * math.pi * phi) * self.points[..., 0] + 0.5 * np.sin(2.0 * math.pi * theta))[..., None]

    def build_model(self):
        return RayProbe(self.config.model.width, self.config.cam, self.config.grid,
                        seed=self.config.train.seed, layout=self.coordinate_layout)

    def train_batch(self, indices=None):
        if indices is None:
            return Batch(self.coords, self.targets, self.points)
        return Batch(self.coords[indices], self.targets[indices], self.points[indices])

    def predict(self, model, batch, capture=False):
        return model.forward(batch.inputs, batch.coords, capture=capture)


class SyntheticVideoTask(Task):
    kind = 'synthetic-video-tensor'
    coordinate_layout = ('t',)
    feature_channel_axis = 1
    out_dim = None

    def __init__(self, config):
        super().__init__(config)
        rng = np.random.default_rng(config.train.seed)
        n, c, size = config.task.frames, config.model.width, config.task.plane_size
        self.coords = np.linspace(0.0, 1.0, n)[:, None] if n > 1 else np.zeros((1, 1))
        self.features = rng.normal(size=(n, c, size, size))
        t = self.coords[:, 0][:, None]
        channel = np.arange(c)[None, :]
        gamma = 1.0 + 0.5 * np.sin(2.0 * math.pi * t + channel)
        beta = 0.3 * np.cos(2.0 * math.pi * t + channel)
        mu = self.features.mean(axis=(2, 3), keepdims=True)
        var = self.features.var(axis=(2, 3), keepdims=True)
        normalized = (self.features - mu) / np.sqrt(var + settings.CAM_EPS)
        self.targets = gamma[..., None, None] * normalized + beta[..., None, None]

    def build_model(self):
        return VideoProbe(self.config.model.width, self.config.cam, self.config.grid, seed=self.config.train.seed)

    def train_batch(self, indices=None):
        if indices is None:
            return Batch(self.coords, self.targets, self.features)
        return Batch(self.coords[indices], self.targets[indices], self.features[indices])

    def predict(self, model, batch, capture=False):
        return model.forward(batch.inputs, batch.coords, capture=capture)


TASKS = {
    'signal1d': Signal1DTask,
    'image-regression': ImageTask,
    'image-generalization': ImageTask,
    'synthetic-ray': SyntheticRayTask,
    'synthetic-video-tensor': SyntheticVideoTask,
}


def make_task(config, pixels=None) -> Task:
    task_class = TASKS[config.task.kind]
    if task_class is ImageTask:
        return ImageTask(config, pixels=pixels)
    return task_class(config)


# --- Обучение и оценка ---

@dataclass
class MetricRecord:
    iteration: int
    loss: float
    psnr: float = None
    lr: float = None


@dataclass
class EvalResult:
    mse: float
    psnr: float
    prediction: np.ndarray
    features: np.ndarray = None


@dataclass
class TrainRun:
    config: object
    task: Task
    model: object
    optimizer: Adam
    iteration: int = 0
    metrics: list = field(default_factory=list)
    final_train_psnr: float = None
    final_loss: float = None

    def log(self, record: MetricRecord):
        if self.metrics and record.iteration < self.metrics[-1].iteration:
            raise ValueError("metric log must be monotone in iteration")
        self.metrics.append(record)

    def best_loss(self, upto=None):
        losses = [r.loss for r in self.metrics if upto is None or r.iteration <= upto]
        return min(losses) if losses else None

    def loss_at(self, iteration):
        for record in self.metrics:
            if record.iteration == iteration:
                return record.loss
        return None


def param_groups(model, config):
    groups = {'network': [], 'grid': []}
    for path, tensor, group in model.parameters():
        groups[group].append((path, tensor))
    rates = {'network': config.optim.lr_network, 'grid': config.optim.lr_grid}
    return [{'name': name, 'params': params, 'lr': rates[name]} for name, params in groups.items() if params]


def evaluate(model, task: Task, split='train', chunk=None, capture_stage=None) -> EvalResult:
    """Предсказание по всему набору кусками без записи в ленту; capture_stage - индекс стадии для признаков."""
    chunk = chunk or settings.CAM_IMAGE_BATCH_SIZE
    batch_fn = task.train_batch if split == 'train' else task.eval_batch
    full = batch_fn()
    n = len(full.targets)
    predictions, features = [], []
    with no_grad():
        for start in range(0, n, chunk):
            indices = np.arange(start, min(start + chunk, n))
            batch = batch_fn(indices)
            if capture_stage is None:
                predictions.append(task.predict(model, batch).data)
            else:
                out, captured = task.predict(model, batch, capture=True)
                predictions.append(out.data)
                features.append(captured[capture_stage].data)
    prediction = np.concatenate(predictions, axis=0)
    error = mse(prediction, full.targets)
    value = settings.CAM_PSNR_INFINITE if error == 0.0 else 10.0 * math.log10(task.peak ** 2 / error)
    return EvalResult(error, value, prediction, np.concatenate(features, axis=0) if features else None)


def _check_parameters(model, iteration):
    for path, tensor, _ in model.parameters():
        if not np.all(np.isfinite(tensor.data)):
            raise NonFiniteError("Non-finite parameter after optimizer step", iteration=iteration, path=path)


def train(config, task=None, model=None, progress=False) -> TrainRun:
    """Полный цикл обучения. Детерминирован при фиксированном seed."""
    task = task or make_task(config)
    model = model or task.build_model()
    optimizer = Adam(param_groups(model, config))
    schedule = StepSchedule({'network': config.optim.lr_network, 'grid': config.optim.lr_grid},
                            config.optim.milestones, config.optim.factor)
    run = TrainRun(config=config, task=task, model=model, optimizer=optimizer)
    rng = np.random.default_rng(config.train.seed)
    iterations, log_every = config.train.iterations, config.train.log_every

    logger.info(f"Training {task.kind}: {iterations} iterations, CAM={'on' if config.cam.enabled else 'off'}"
                f"{'' if config.cam.normalize else ' (no normalization)'}, seed={config.train.seed}.")
    for iteration in tqdm(range(iterations), desc=task.kind, disable=not progress):
        rates = schedule(iteration)
        optimizer.set_lr(rates)
        batch = task.train_batch(task.sample_indices(rng, config.train.batch_size))
        with recording():
            loss = mse_loss(task.predict(model, batch), batch.targets)
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                raise NonFiniteError("Non-finite loss", iteration=iteration)
            backward(loss)
        optimizer.step()
        _check_parameters(model, iteration)

        run.iteration = iteration + 1
        record = MetricRecord(iteration=iteration, loss=loss_value, lr=rates['network'])
        if (iteration + 1) % log_every == 0 and iteration + 1 < iterations:
            record.psnr = evaluate(model, task, 'train').psnr
            logger.info(f"[{task.kind}] iteration {iteration + 1}/{iterations}: loss {loss_value:.6g}, "
                        f"train PSNR {record.psnr:.2f} dB")
        else:
            logger.debug(f"[{task.kind}] iteration {iteration + 1}: loss {loss_value:.6g}")
        run.log(record)

    final = evaluate(model, task, 'train')
    run.final_train_psnr = final.psnr
    run.final_loss = final.mse
    if run.metrics:
        run.metrics[-1].psnr = final.psnr
    logger.info(f"Finished {task.kind}: final train MSE {final.mse:.6g}, PSNR {final.psnr:.2f} dB.")
    return run
