from django.apps import AppConfig
import logging

logger = logging.getLogger(__name__)


class CoreConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'core'
    verbose_name = 'CAM neural fields'

    def ready(self):
        from django.conf import settings
        logger.debug(f"camfields ready (dtype={settings.CAM_TENSOR_DTYPE}, eps={settings.CAM_EPS}).")
