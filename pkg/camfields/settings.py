"""
Django settings for camfields project.

Проект используется как CLI-библиотека (manage.py train/eval/analyze/ablate),
веб-часть не подключена. Все значения по умолчанию для библиотеки
нейронных полей лежат здесь в виде констант CAM_*.

For the full list of Django settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get('CAM_SECRET_KEY', 'camfields-local-cli-only')

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'core.apps.CoreConfig',
]

MIDDLEWARE = []


# Database
# https://docs.djangoproject.com/en/5.2/ref/settings/#databases

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.environ.get('CAM_DB_PATH', BASE_DIR / 'db.sqlite3'),
    }
}


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

# Default primary key field type
# https://docs.djangoproject.com/en/5.2/ref/settings/#default-auto-field

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Логирование: один консольный обработчик для библиотеки
CAM_LOG_LEVEL = os.environ.get('CAM_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'core': {
            'handlers': ['console'],
            'level': CAM_LOG_LEVEL,
            'propagate': False,
        },
    },
}


# --- Настройки нейронных полей (CAM) ---

# Точность хранения тензоров; 'float64' - отладочный режим
CAM_TENSOR_DTYPE = 'float32'
CAM_ACCUMULATE_DOUBLE = False # Накопление mean/variance в float64

# Нормализация и сетки
CAM_EPS = 1e-5
CAM_GAMMA_INIT = 1.0 # Γ стартует с единицы
CAM_BETA_INIT = 0.0 # B стартует с нуля -> слой начинается как чистая стандартизация
CAM_COORD_TOLERANCE = 1e-6 # Допуск выхода координат за [0, 1]

# Adam
CAM_ADAM_BETAS = (0.9, 0.999)
CAM_ADAM_EPS = 1e-8

# Расписание по умолчанию (изображения): сеть / сетки
CAM_LR_NETWORK = 1e-3
CAM_LR_GRID = 1e-2
CAM_LR_MILESTONES = (1000, 1500)
CAM_LR_FACTOR = 0.1

# Обучение
CAM_IMAGE_BATCH_SIZE = 2 ** 14
CAM_LOG_EVERY = 100 # Как часто считать PSNR и писать строку в metrics.tsv
CAM_PSNR_INFINITE = float('inf') # Значение PSNR при MSE == 0
CAM_DIRECT_DFT_LIMIT = 4096 # Максимум H*W для прямого ДПФ при размерах не степени двойки

# Каталог для артефактов запусков
CAM_OUTPUT_ROOT = Path(os.environ.get('CAM_OUTPUT_ROOT', BASE_DIR / 'runs'))

# Долгие воспроизводящие тесты (минуты) включаются явно
CAM_RUN_SLOW_TESTS = os.environ.get('CAM_RUN_SLOW_TESTS', '') not in ('', '0', 'false')
# Картинка для долгих тестов (256x256 или больше); пусто - процедурная
CAM_ACCEPTANCE_IMAGE = os.environ.get('CAM_ACCEPTANCE_IMAGE', '')
