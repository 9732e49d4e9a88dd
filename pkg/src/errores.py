"""
Jerarquía de excepciones del paquete de ajuste por covariables
"""
from typing import List, Optional


class ErrorAjusteCovariables(ValueError):
    """Error base de todo el paquete"""


class ErrorDatos(ErrorAjusteCovariables):
    """Datos de entrada inválidos (CSV, esquema de columnas, ensayo)"""


class ErrorConfiguracion(ErrorAjusteCovariables):
    """Archivo de configuración mal formado o con valores inválidos"""


class ErrorAleatorizacion(ErrorAjusteCovariables):
    """Especificación de esquema inválida o estado de asignación corrupto"""


class ErrorModelo(ErrorAjusteCovariables):
    """
    Fallo al ajustar un modelo de trabajo

    Attributes:
        norma_gradiente: última norma del gradiente (solo para no convergencia de IRLS)
    """

    def __init__(self, mensaje: str, norma_gradiente: Optional[float] = None):
        super().__init__(mensaje)
        self.norma_gradiente = norma_gradiente


class ErrorEstimacion(ErrorAjusteCovariables):
    """Fallo al calcular un estimador o su varianza"""


class RechazoVarianza(ErrorEstimacion):
    """
    El sabor de varianza pedido no es válido para el esquema de aleatorización

    Attributes:
        alternativas: sabores de varianza que sí son válidos
    """

    def __init__(self, mensaje: str, alternativas: List[str]):
        texto = f"{mensaje} (alternativas válidas: {', '.join(alternativas)})"
        super().__init__(texto)
        self.alternativas = list(alternativas)
