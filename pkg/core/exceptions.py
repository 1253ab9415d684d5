# core/exceptions.py
"""Исключения библиотеки. Команды manage.py превращают их в CommandError."""


class CamError(Exception):
    """Базовое исключение для всех ошибок библиотеки."""


class ShapeError(CamError, ValueError):
    def __init__(self, message, *shapes):
        self.shapes = tuple(tuple(s) for s in shapes)
        if shapes:
            message = f"{message}: " + " vs ".join(str(s) for s in self.shapes)
        super().__init__(message)


class DomainError(CamError, ValueError):
    """Координаты вне единичной области (ошибка в подготовке данных задачи)."""


class ConfigError(CamError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NonFiniteError(CamError, ArithmeticError):
    def __init__(self, message, iteration=None, path=None):
        self.iteration = iteration
        self.path = path
        details = []
        if iteration is not None:
            details.append(f"iteration {iteration}")
        if path is not None:
            details.append(f"parameter {path}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)


class CheckpointError(CamError, IOError):
    pass


class DatasetError(CamError, OSError):
    """Входной файл (изображение) не читается или не подходит задаче."""
