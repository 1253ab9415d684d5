# Generated by Django 5.2 on 2026-10-12 14:02

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='TrainingRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('command', models.CharField(choices=[('train', 'Обучение'), ('eval', 'Оценка'), ('analyze', 'Анализ'), ('ablate', 'Абляция')], max_length=20, verbose_name='Команда')),
                ('variant', models.CharField(blank=True, help_text='baseline / cam-n / cam для абляции', max_length=20, verbose_name='Вариант')),
                ('task', models.CharField(max_length=40, verbose_name='Задача')),
                ('seed', models.IntegerField(default=0, verbose_name='Seed')),
                ('parameters', models.JSONField(blank=True, help_text='Провалидированный конфиг запуска', null=True, verbose_name='Параметры')),
                ('status', models.CharField(choices=[('pending', 'Ожидание'), ('running', 'Выполняется'), ('completed', 'Завершено'), ('failed', 'Ошибка')], default='pending', max_length=20, verbose_name='Статус')),
                ('started_at', models.DateTimeField(blank=True, null=True, verbose_name='Время начала')),
                ('finished_at', models.DateTimeField(blank=True, null=True, verbose_name='Время завершения')),
                ('final_train_psnr', models.FloatField(blank=True, help_text='Пусто, если ошибка равна нулю (PSNR бесконечен)', null=True, verbose_name='PSNR на обучении (дБ)')),
                ('final_eval_psnr', models.FloatField(blank=True, null=True, verbose_name='PSNR на оценке (дБ)')),
                ('output_dir', models.CharField(blank=True, max_length=500, verbose_name='Каталог результатов')),
                ('logs', models.TextField(blank=True, verbose_name='Логи выполнения')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'verbose_name': 'Запуск',
                'verbose_name_plural': 'Запуски',
                'ordering': ['-created_at'],
            },
        ),
    ]
