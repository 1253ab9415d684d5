# core/forms.py
"""
Формы Django для проверки секций конфигурационного файла запуска.
Каждая секция [task], [model], ... проверяется своей формой: типы, диапазоны, варианты.
"""
from django import forms

TASK_KINDS = (
    ('signal1d', '1D регрессия суммы синусоид'),
    ('image-regression', 'Регрессия изображения'),
    ('image-generalization', 'Обобщение изображения (обучение на половинном разрешении)'),
    ('synthetic-ray', 'Синтетические лучи (режим ray)'),
    ('synthetic-video-tensor', 'Синтетический 4D тензор (режим channel)'),
)
ENCODINGS = (('none', 'Без кодирования'), ('fourier', 'Гауссовы Fourier features'), ('positional', 'Степени двойки'))
HEADS = (('sigmoid', 'Сигмоида'), ('identity', 'Линейный выход'))
CAM_MODES = (('scalar', 'Скаляр на строку'), ('ray', 'Скаляр на луч'), ('channel', 'По каналам'))
BITS = (('32', 'Без квантования'), ('8', '8 бит'), ('6', '6 бит'))


def _int_list(value, field_name, minimum=None, allow_empty=True):
    value = (value or '').strip()
    if not value:
        if allow_empty:
            return ()
        raise forms.ValidationError(f"'{field_name}' needs at least one integer")
    try:
        items = tuple(int(part) for part in value.replace(',', ' ').split())
    except ValueError:
        raise forms.ValidationError(f"'{field_name}' must be a comma-separated list of integers, got '{value}'")
    if minimum is not None and any(item < minimum for item in items):
        raise forms.ValidationError(f"every value of '{field_name}' must be >= {minimum}")
    return items


class TaskSectionForm(forms.Form):
    kind = forms.ChoiceField(choices=TASK_KINDS)
    image = forms.CharField(required=False)
    samples = forms.IntegerField(min_value=2)
    rays = forms.IntegerField(min_value=1)
    points_per_ray = forms.IntegerField(min_value=1)
    frames = forms.IntegerField(min_value=1)
    plane_size = forms.IntegerField(min_value=1)


class ModelSectionForm(forms.Form):
    depth = forms.IntegerField(min_value=2)
    width = forms.IntegerField(min_value=1)
    encoding = forms.ChoiceField(choices=ENCODINGS)
    gaussian_scale = forms.FloatField(min_value=0.0)
    num_frequencies = forms.IntegerField(min_value=1)
    include_input = forms.BooleanField(required=False)
    head = forms.ChoiceField(choices=HEADS)
    max_octave = forms.CharField(required=False, help_text='auto - num_frequencies - 1')

    def clean_max_octave(self):
        value = (self.cleaned_data.get('max_octave') or '').strip()
        if value in ('', 'auto'):
            return None
        try:
            octave = float(value)
        except ValueError:
            raise forms.ValidationError(f"'max_octave' must be a number or 'auto', got '{value}'")
        if octave < 0:
            raise forms.ValidationError("'max_octave' must be >= 0")
        return octave


class CamSectionForm(forms.Form):
    enabled = forms.BooleanField(required=False)
    placements = forms.CharField(required=False)
    mode = forms.ChoiceField(choices=CAM_MODES)
    normalize = forms.BooleanField(required=False)
    eps = forms.FloatField(min_value=0.0)
    selector = forms.CharField(required=False)
    norm_axes = forms.CharField(required=False)

    def clean_placements(self):
        return _int_list(self.cleaned_data.get('placements'), 'placements', minimum=0)

    def clean_selector(self):
        value = (self.cleaned_data.get('selector') or '').strip()
        if value in ('', 'auto'):
            return None
        return _int_list(value, 'selector', minimum=0, allow_empty=False)

    def clean_norm_axes(self):
        value = (self.cleaned_data.get('norm_axes') or '').strip()
        if value in ('', 'auto'):
            return None
        return _int_list(value, 'norm_axes', minimum=1, allow_empty=False)


class GridSectionForm(forms.Form):
    resolution = forms.CharField()
    channels = forms.IntegerField(min_value=1)

    def clean_resolution(self):
        resolution = _int_list(self.cleaned_data.get('resolution'), 'resolution', minimum=2, allow_empty=False)
        if len(resolution) > 2:
            raise forms.ValidationError("grids are rank 1 or 2")
        return resolution


class OptimSectionForm(forms.Form):
    lr_network = forms.FloatField(min_value=1e-12)
    lr_grid = forms.FloatField(min_value=1e-12)
    milestones = forms.CharField(required=False)
    factor = forms.FloatField(min_value=1e-12)

    def clean_milestones(self):
        milestones = _int_list(self.cleaned_data.get('milestones'), 'milestones', minimum=1)
        if any(b <= a for a, b in zip(milestones, milestones[1:])):
            raise forms.ValidationError("milestones must be strictly increasing")
        return milestones


class TrainSectionForm(forms.Form):
    iterations = forms.IntegerField(min_value=1)
    batch_size = forms.IntegerField(min_value=0, help_text="0 - полный батч")
    seed = forms.IntegerField(min_value=0)
    log_every = forms.IntegerField(min_value=1)


class IoSectionForm(forms.Form):
    output = forms.CharField(required=False)
    bits = forms.TypedChoiceField(choices=BITS, coerce=int)


SECTION_FORMS = {
    'task': TaskSectionForm,
    'model': ModelSectionForm,
    'cam': CamSectionForm,
    'grid': GridSectionForm,
    'optim': OptimSectionForm,
    'train': TrainSectionForm,
    'io': IoSectionForm,
}
