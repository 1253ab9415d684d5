import math

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from core.exceptions import NonFiniteError, ShapeError
from core.tasks import (
    SIGNAL_FREQUENCIES, ImageDataset, RayProbe, Signal1DSpec, TrainRun, MetricRecord, eval_signal1d, evaluate,
    make_signal1d, make_task, mse, pixel_coords, psnr, split_generalization, train,
)

from .helpers import make_config, smooth_image

SMALL_IMAGE_MODEL = {'depth': 2, 'width': 16, 'encoding': 'none'}


def image_config(**sections):
    sections.setdefault('model', SMALL_IMAGE_MODEL)
    return make_config('image-regression', task={'image': 'in-memory.ppm'}, **sections)


class Signal1DTests(SimpleTestCase):
    def zero_phase(self):
        return Signal1DSpec(SIGNAL_FREQUENCIES, (0.0,) * 10)

    def test_zero_at_origin(self):
        self.assertEqual(float(eval_signal1d(self.zero_phase(), 0.0)), 0.0)

    def test_zero_at_one(self):
        self.assertAlmostEqual(float(eval_signal1d(self.zero_phase(), 1.0)), 0.0, places=10)

    def test_matches_term_by_term_sum(self):
        spec = make_signal1d(3)
        expected = sum(math.sin(2 * math.pi * k * 0.1 + phase) for k, phase in zip(spec.frequencies, spec.phases))
        self.assertAlmostEqual(float(eval_signal1d(spec, 0.1)), expected, places=12)

    def test_ten_terms_bounded(self):
        spec = make_signal1d(0)
        self.assertEqual(len(spec.frequencies), 10)
        self.assertEqual(spec.frequencies, (5, 10, 15, 20, 25, 30, 35, 40, 45, 50))
        self.assertTrue(all(0.0 <= p < 2 * math.pi for p in spec.phases))
        values = eval_signal1d(spec, np.linspace(0.0, 1.0, 1024))
        self.assertLessEqual(float(np.abs(values).max()), 10.0)

    def test_seed_reproduces_signal(self):
        self.assertEqual(make_signal1d(5), make_signal1d(5))
        self.assertNotEqual(make_signal1d(5).phases, make_signal1d(6).phases)

    def test_task_samples_uniformly(self):
        task = make_task(make_config('signal1d'))
        batch = task.train_batch()
        self.assertEqual(batch.coords.shape, (1024, 1))
        self.assertEqual(batch.coords[0, 0], 0.0)
        self.assertEqual(batch.coords[-1, 0], 1.0)


class MetricTests(SimpleTestCase):
    def test_identical_arrays(self):
        self.assertEqual(psnr(np.ones(4), np.ones(4)), settings.CAM_PSNR_INFINITE)

    def test_twenty_db(self):
        self.assertAlmostEqual(psnr(np.zeros(4), np.full(4, 0.1)), 20.0, places=6)

    def test_thirty_db(self):
        self.assertAlmostEqual(psnr(np.zeros(4), np.full(4, math.sqrt(0.001))), 30.0, places=6)

    def test_peak(self):
        self.assertAlmostEqual(psnr(np.zeros(4), np.full(4, 0.2), peak=2.0), 20.0, places=6)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            mse(np.zeros(3), np.zeros(4))


class ImageDatasetTests(SimpleTestCase):
    def test_pixel_center_coordinates(self):
        coords = pixel_coords(2, 4)
        np.testing.assert_allclose(coords[0], [0.125, 0.25])
        np.testing.assert_allclose(coords[1], [0.375, 0.25])
        np.testing.assert_allclose(coords[4], [0.125, 0.75])

    def test_coordinates_inside_open_domain(self):
        coords = ImageDataset.from_array(smooth_image(8)).coords
        self.assertTrue(np.all((coords > 0.0) & (coords < 1.0)))

    def test_rejects_grayscale(self):
        with self.assertRaises(ShapeError):
            ImageDataset.from_array(np.zeros((4, 4)))

    def test_generalization_split_counts(self):
        train_set, eval_set = split_generalization(smooth_image(4))
        self.assertEqual(len(train_set), 4)
        self.assertEqual(len(eval_set), 16)

    def test_generalization_uses_even_pixels(self):
        pixels = smooth_image(8, seed=2)
        train_set, eval_set = split_generalization(pixels)
        np.testing.assert_array_equal(train_set.pixels, pixels[::2, ::2])
        np.testing.assert_array_equal(eval_set.pixels, pixels)
        self.assertTrue(np.all((train_set.coords > 0.0) & (train_set.coords < 1.0)))

    def test_generalization_needs_even_dims(self):
        with self.assertRaises(ShapeError):
            split_generalization(np.zeros((5, 4, 3)))

    def test_generalization_task_splits(self):
        config = make_config('image-generalization', task={'image': 'in-memory.ppm'}, model=SMALL_IMAGE_MODEL)
        task = make_task(config, pixels=smooth_image(8))
        self.assertEqual(task.train_size, 16)
        self.assertEqual(task.eval_size(), 64)


class TrainRunTests(SimpleTestCase):
    def test_metric_log_is_monotone(self):
        run = TrainRun(config=None, task=None, model=None, optimizer=None)
        run.log(MetricRecord(iteration=3, loss=1.0))
        with self.assertRaises(ValueError):
            run.log(MetricRecord(iteration=2, loss=0.5))
        self.assertEqual(run.loss_at(3), 1.0)
        self.assertIsNone(run.loss_at(4))


class TrainTests(SimpleTestCase):
    def test_constant_image_is_learned(self):
        config = image_config(train={'iterations': 50}, optim={'lr_network': 1e-2})
        task = make_task(config, pixels=np.full((8, 8, 3), 0.5))
        run = train(config, task=task)
        self.assertGreater(run.final_train_psnr, 40.0)
        self.assertEqual(len(run.metrics), 50)
        self.assertEqual(run.metrics[-1].psnr, run.final_train_psnr)

    def test_signal_loss_decreases(self):
        config = make_config('signal1d', model={'width': 16}, train={'iterations': 10})
        run = train(config)
        self.assertLess(run.best_loss(), run.loss_at(0))
        self.assertEqual([r.iteration for r in run.metrics], list(range(10)))

    def test_deterministic_per_seed(self):
        config = make_config('signal1d', model={'width': 8}, train={'iterations': 5, 'seed': 4})
        first, second = train(config), train(config)
        self.assertAlmostEqual(first.final_train_psnr, second.final_train_psnr, delta=0.05)
        self.assertEqual([r.loss for r in first.metrics], [r.loss for r in second.metrics])

    def test_learning_rate_logged(self):
        config = make_config('signal1d', model={'width': 8}, train={'iterations': 3},
                             optim={'milestones': '2', 'lr_network': 1e-3})
        rates = [r.lr for r in train(config).metrics]
        self.assertEqual(rates[:2], [1e-3, 1e-3])
        self.assertAlmostEqual(rates[2], 1e-4, places=12)

    def test_periodic_psnr(self):
        config = make_config('signal1d', model={'width': 8}, train={'iterations': 6, 'log_every': 2})
        records = train(config).metrics
        self.assertEqual([r.psnr is not None for r in records], [False, True, False, True, False, True])

    def test_minibatches(self):
        config = image_config(train={'iterations': 3, 'batch_size': 10})
        task = make_task(config, pixels=smooth_image(8))
        self.assertEqual(len(task.sample_indices(np.random.default_rng(0), 10)), 10)
        self.assertIsNone(task.sample_indices(np.random.default_rng(0), 0))
        self.assertEqual(train(config, task=task).iteration, 3)

    def test_non_finite_loss_aborts(self):
        pixels = np.full((4, 4, 3), 0.5)
        pixels[1, 2, 0] = np.nan
        config = image_config(train={'iterations': 5})
        with self.assertRaises(NonFiniteError) as ctx:
            train(config, task=make_task(config, pixels=pixels))
        self.assertEqual(ctx.exception.iteration, 0)

    def test_synthetic_ray_task(self):
        config = make_config('synthetic-ray', train={'iterations': 5})
        task = make_task(config)
        model = task.build_model()
        self.assertIsInstance(model, RayProbe)
        # приоритет координат: направление взгляда (phi, theta)
        self.assertEqual(model.cam.selector, (3, 4))
        run = train(config, task=task, model=model)
        self.assertLess(run.best_loss(), run.loss_at(0))
        self.assertEqual(evaluate(model, task).prediction.shape, (64, 8, 1))

    def test_synthetic_video_task(self):
        config = make_config('synthetic-video-tensor', train={'iterations': 5})
        task = make_task(config)
        run = train(config, task=task)
        self.assertLess(run.best_loss(), run.loss_at(0))
        result = evaluate(run.model, task, capture_stage=0)
        self.assertEqual(result.prediction.shape, (8, 8, 8, 8))
        self.assertEqual(result.features.shape, (8, 8, 8, 8))

    def test_capture_stage_features(self):
        config = make_config('signal1d', model={'width': 8}, train={'iterations': 1})
        task = make_task(config)
        run = train(config, task=task)
        result = evaluate(run.model, task, chunk=100, capture_stage=1)
        self.assertEqual(result.features.shape, (1024, 8))
        self.assertEqual(result.prediction.shape, (1024, 1))
