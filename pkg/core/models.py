import logging
import math

from django.db import models
from django.utils import timezone

logger = logging.getLogger(__name__)


def _finite_or_none(value):
    if value is None or not math.isfinite(value):
        return None
    return float(value)


# Журнал запусков команд (train / eval / analyze / ablate)
class TrainingRun(models.Model):
    STATUS_CHOICES = [
        ('pending', 'Ожидание'),
        ('running', 'Выполняется'),
        ('completed', 'Завершено'),
        ('failed', 'Ошибка'),
    ]
    COMMAND_CHOICES = [
        ('train', 'Обучение'),
        ('eval', 'Оценка'),
        ('analyze', 'Анализ'),
        ('ablate', 'Абляция'),
    ]
    command = models.CharField(max_length=20, choices=COMMAND_CHOICES, verbose_name="Команда")
    variant = models.CharField(max_length=20, blank=True, verbose_name="Вариант", help_text="baseline / cam-n / cam для абляции")
    task = models.CharField(max_length=40, verbose_name="Задача")
    seed = models.IntegerField(default=0, verbose_name="Seed")
    parameters = models.JSONField(verbose_name="Параметры", null=True, blank=True, help_text="Провалидированный конфиг запуска")
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='pending', verbose_name="Статус")
    started_at = models.DateTimeField(null=True, blank=True, verbose_name="Время начала")
    finished_at = models.DateTimeField(null=True, blank=True, verbose_name="Время завершения")
    final_train_psnr = models.FloatField(null=True, blank=True, verbose_name="PSNR на обучении (дБ)",
                                         help_text="Пусто, если ошибка равна нулю (PSNR бесконечен)")
    final_eval_psnr = models.FloatField(null=True, blank=True, verbose_name="PSNR на оценке (дБ)")
    output_dir = models.CharField(max_length=500, blank=True, verbose_name="Каталог результатов")
    logs = models.TextField(blank=True, verbose_name="Логи выполнения")
    created_at = models.DateTimeField(auto_now_add=True)

    def __str__(self):
        label = f"{self.command}/{self.variant}" if self.variant else self.command
        return f"Run {self.id} {label} {self.task} ({self.status})"

    def start(self):
        self.status = 'running'
        self.started_at = timezone.now()
        self.save(update_fields=['status', 'started_at'])

    def complete(self, train_psnr=None, eval_psnr=None, output_dir=''):
        self.status = 'completed'
        self.finished_at = timezone.now()
        self.final_train_psnr = _finite_or_none(train_psnr)
        self.final_eval_psnr = _finite_or_none(eval_psnr)
        self.output_dir = str(output_dir or '')
        self.save(update_fields=['status', 'finished_at', 'final_train_psnr', 'final_eval_psnr', 'output_dir'])

    def fail(self, message):
        self.status = 'failed'
        self.finished_at = timezone.now()
        self.logs = f"{self.logs}\n{message}".strip()
        self.save(update_fields=['status', 'finished_at', 'logs'])
        logger.warning(f"Run {self.id} ({self.command}) failed: {message}")

    class Meta:
        verbose_name = "Запуск"
        verbose_name_plural = "Запуски"
        ordering = ['-created_at']
