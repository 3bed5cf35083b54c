"""
Jerarquía de excepciones del simulador.

Cada clase expone `exit_code`, que la CLI usa para traducir el error a un
código de salida estable (2 = configuración/validación, 1 = fallo en ejecución).
"""


class FedSimError(Exception):
    """Error base del simulador."""
    exit_code = 1


class ConfigError(FedSimError, ValueError):
    """Configuración inválida o incompleta."""
    exit_code = 2


class ContractError(FedSimError, ValueError):
    """Se violó una precondición de una operación."""


class DimensionError(FedSimError, ValueError):
    """Las dimensiones de los operandos no son compatibles."""


class SequenceTooShortError(FedSimError, ValueError):
    """La secuencia es más corta que el kernel de convolución."""


class EmptySequenceError(FedSimError, ValueError):
    """Secuencia sin pasos temporales."""


class LabelError(FedSimError, ValueError):
    """Etiqueta fuera del rango [0, C)."""


class NumericError(FedSimError, ArithmeticError):
    """Se obtuvo un valor no finito."""


class DivergenceError(NumericError):
    """Gradiente no finito durante un paso de optimización."""

    def __init__(self, message: str, tensor: str = None):
        super().__init__(message)
        self.tensor = tensor


class ClientDivergenceError(NumericError):
    """La pérdida local de un cliente dejó de ser finita."""

    def __init__(self, message: str, client_id: str = None):
        super().__init__(message)
        self.client_id = client_id


class ParseError(FedSimError, ValueError):
    """Registro mal formado en un archivo de datos."""

    def __init__(self, message: str, line: int = None):
        if line is not None:
            message = f"línea {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(FedSimError, ValueError):
    """Los datos no coinciden con el manifiesto."""


class InfeasibleFoldError(FedSimError, ValueError):
    """No hay suficientes clientes para el número de folds pedido."""


class MissingClientIdError(FedSimError, ValueError):
    """Una muestra de entrenamiento no tiene client_id."""


class InfeasiblePartitionError(FedSimError, ValueError):
    """Se agotaron los reintentos de la partición Dirichlet."""


class EmptyCohortError(FedSimError, ValueError):
    """No hay clientes elegibles o no llegó ninguna actualización."""


class DegenerateAttentionError(FedSimError, ValueError):
    """Todas las filas de la atención están enmascaradas."""


class UndefinedMetricError(FedSimError, ValueError):
    """La métrica no está definida para las etiquetas dadas."""
