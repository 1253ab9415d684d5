import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from core.config import load_config, parse_config, serialize_config
from core.exceptions import ConfigError
from core.tasks import make_task

from .helpers import config_text, make_config


class DefaultsTests(SimpleTestCase):
    def test_signal_defaults(self):
        config = make_config('signal1d')
        self.assertEqual((config.model.depth, config.model.width), (4, 64))
        self.assertEqual(config.grid.resolution, (64,))
        self.assertEqual(config.train.iterations, 1500)
        self.assertEqual(config.train.batch_size, 0)
        self.assertEqual(config.model.encoding, 'positional')
        self.assertEqual(config.model.num_frequencies, 16)
        self.assertEqual(config.model.max_octave, 4.0)
        self.assertTrue(config.model.include_input)
        self.assertEqual(config.model.head, 'identity')
        self.assertEqual(config.optim.milestones, ())

    def test_image_defaults(self):
        config = make_config('image-regression', task={'image': 'photo.ppm'})
        self.assertEqual((config.model.depth, config.model.width), (4, 256))
        self.assertEqual(config.model.head, 'sigmoid')
        self.assertEqual(config.model.encoding, 'fourier')
        self.assertEqual(config.model.gaussian_scale, 10.0)
        self.assertEqual(config.train.iterations, 2000)
        self.assertEqual(config.optim.milestones, (1000, 1500))
        self.assertEqual((config.optim.lr_network, config.optim.lr_grid), (1e-3, 1e-2))
        self.assertEqual(config.grid.resolution, (32, 32))
        self.assertIsNone(config.model.max_octave)

    def test_cam_defaults_to_last_hidden_layer(self):
        self.assertEqual(make_config('signal1d').cam.placements, (2,))
        self.assertEqual(make_config('signal1d', model={'depth': 6}).cam.placements, (4,))
        config = make_config('signal1d')
        self.assertTrue(config.cam.enabled and config.cam.normalize)
        self.assertIsNone(config.cam.selector)

    def test_synthetic_modes(self):
        self.assertEqual(make_config('synthetic-ray').cam.mode, 'ray')
        video = make_config('synthetic-video-tensor')
        self.assertEqual(video.cam.mode, 'channel')
        self.assertEqual(video.grid.channels, video.model.width)
        self.assertIsNone(video.cam.norm_axes)


class ParseTests(SimpleTestCase):
    def test_comments_and_case(self):
        text = "# run\n[TASK]\nKind = signal1d ; trailing text is not a comment\n"
        with self.assertRaises(ConfigError):
            parse_config(text)
        config = parse_config("# run\n; another comment\n[task]\nkind = signal1d   # inline\n")
        self.assertEqual(config.task.kind, 'signal1d')

    def test_hash_inside_value(self):
        config = make_config('image-regression', task={'image': 'data/run#3.ppm'})
        self.assertEqual(config.task.image, 'data/run#3.ppm')
        config = parse_config("[task]\nkind = image-regression\nimage = data/run#3.ppm # photo\n")
        self.assertEqual(config.task.image, 'data/run#3.ppm')

    def test_norm_axes(self):
        config = make_config('synthetic-video-tensor', cam={'norm_axes': '1, 2, 3'}, grid={'channels': 1})
        self.assertEqual(config.cam.norm_axes, (1, 2, 3))
        model = make_task(config).build_model()
        self.assertEqual(model.cam_layers[0].norm_axes, (1, 2, 3))
        self.assertEqual(make_config('synthetic-ray').cam.norm_axes, None)

    def test_overrides(self):
        config = make_config('signal1d', cam={'enabled': 'false'}, grid={'resolution': 128},
                             train={'seed': 7}, io={'bits': 8})
        self.assertFalse(config.cam.enabled)
        self.assertEqual(config.grid.resolution, (128,))
        self.assertEqual(config.train.seed, 7)
        self.assertEqual(config.io.bits, 8)

    def test_round_trip(self):
        configs = [
            make_config('signal1d'),
            make_config('image-generalization', task={'image': 'photo.ppm'}, model={'gaussian_scale': 14.0},
                        cam={'normalize': 'false', 'selector': '0, 1'}, io={'output': 'runs/x', 'bits': 6}),
            make_config('synthetic-ray', train={'iterations': 3}),
            make_config('synthetic-video-tensor', optim={'milestones': '10, 20', 'factor': 0.5},
                        cam={'norm_axes': '1, 2, 3'}, grid={'channels': 1}),
            make_config('signal1d', model={'max_octave': 2.5}),
        ]
        for config in configs:
            self.assertEqual(parse_config(serialize_config(config)), config)

    def test_as_dict(self):
        data = make_config('signal1d').as_dict()
        self.assertEqual(data['task']['kind'], 'signal1d')
        self.assertEqual(data['grid']['resolution'], (64,))

    def test_variants(self):
        config = make_config('signal1d')
        self.assertFalse(config.variant('baseline').cam.enabled)
        self.assertFalse(config.variant('cam-n').cam.normalize)
        self.assertTrue(config.variant('cam').cam.normalize)
        with self.assertRaises(ValueError):
            config.variant('cam-x')


class ErrorTests(SimpleTestCase):
    def assertConfigError(self, text, line):
        with self.assertRaises(ConfigError) as ctx:
            parse_config(text)
        self.assertEqual(ctx.exception.line, line)
        self.assertIn(f'line {line}', str(ctx.exception))
        return ctx.exception

    def test_unknown_key(self):
        error = self.assertConfigError("[task]\nkind = signal1d\n[model]\nwidht = 3\n", 4)
        self.assertIn('widht', str(error))

    def test_unknown_section(self):
        self.assertConfigError("[task]\nkind = signal1d\n[modle]\n", 3)

    def test_duplicate_key(self):
        self.assertConfigError("[task]\nkind = signal1d\n[train]\nseed = 1\nseed = 2\n", 5)

    def test_missing_kind(self):
        self.assertConfigError("[task]\nsamples = 10\n", 1)

    def test_unknown_kind(self):
        self.assertConfigError("[task]\nkind = audio\n", 2)

    def test_type_error(self):
        self.assertConfigError("[task]\nkind = signal1d\n[train]\niterations = many\n", 4)

    def test_value_below_minimum(self):
        self.assertConfigError("[task]\nkind = signal1d\n[model]\ndepth = 1\n", 4)

    def test_line_without_equals(self):
        self.assertConfigError("[task]\nkind signal1d\n", 2)

    def test_key_outside_section(self):
        self.assertConfigError("kind = signal1d\n", 1)

    def test_placement_beyond_depth(self):
        self.assertConfigError(config_text('signal1d', cam={'placements': 5}), 4)

    def test_selector_rank(self):
        self.assertConfigError(config_text('signal1d', cam={'selector': '0, 1'}), 4)

    def test_mode_needs_matching_task(self):
        self.assertConfigError(config_text('signal1d', cam={'mode': 'ray'}), 4)

    def test_multi_channel_grid_outside_channel_mode(self):
        self.assertConfigError(config_text('signal1d', grid={'channels': 4}), 4)

    def test_norm_axes_beyond_feature_rank(self):
        self.assertConfigError(config_text('signal1d', cam={'norm_axes': 2}), 4)
        self.assertConfigError(config_text('signal1d', cam={'norm_axes': 0}), 4)

    def test_negative_max_octave(self):
        self.assertConfigError(config_text('signal1d', model={'max_octave': -1}), 4)

    def test_milestones_increase(self):
        self.assertConfigError(config_text('signal1d', optim={'milestones': '10, 5'}), 4)

    def test_unsupported_bits(self):
        self.assertConfigError(config_text('signal1d', io={'bits': 4}), 4)

    def test_image_needed(self):
        self.assertConfigError(config_text('image-regression'), 1)

    def test_output_must_differ_from_image(self):
        text = config_text('image-regression', task={'image': 'data/photo.ppm'}, io={'output': 'data/photo.ppm'})
        self.assertConfigError(text, 5)


class LoadTests(SimpleTestCase):
    def test_load_from_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'run.ini'
            path.write_text(config_text('signal1d', train={'seed': 3}), encoding='utf-8')
            self.assertEqual(load_config(path).train.seed, 3)

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config('/nonexistent/run.ini')
