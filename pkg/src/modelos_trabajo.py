"""
Modelos de trabajo por brazo para la media condicional E(yₐ | X)

Cada brazo se ajusta por separado con los pacientes asignados a él, de modo que
la interacción tratamiento por covariable aparece sola.
"""
import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.special import digamma, expit, gammaln, polygamma, xlogy
from sklearn.tree import DecisionTreeRegressor

try:
    from .datos import EnsayoClinico
    from .errores import ErrorEstimacion, ErrorModelo
except ImportError:
    from datos import EnsayoClinico
    from errores import ErrorEstimacion, ErrorModelo

logger = logging.getLogger(__name__)

FAMILIAS = ("cero", "lineal", "identidad", "logistico", "poisson",
            "binomial_negativa", "bosque", "oraculo")
FAMILIAS_PARAMETRICAS = ("lineal", "identidad", "logistico", "poisson", "binomial_negativa")
FAMILIAS_CANONICAS = ("lineal", "identidad", "logistico", "poisson")

TOLERANCIA_IRLS = 1e-10
MAX_ITERACIONES_IRLS = 100
RIDGE_IRLS = 1e-8
CONDICION_MAXIMA = 1e12
NORMA_SEPARACION = 1e6
ETA_SATURADO = 30.0
DISPERSION_MINIMA = 1e-6
TOLERANCIA_PODA = 1e-10


class FamiliaGLM:
    """Familia exponencial con su función de enlace, para IRLS"""

    nombre = "base"

    def inversa(self, eta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def enlace(self, mu: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def derivada_media(self, mu: np.ndarray) -> np.ndarray:
        """dμ/dη"""
        raise NotImplementedError

    def varianza(self, mu: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def desviacion(self, y: np.ndarray, mu: np.ndarray) -> float:
        raise NotImplementedError

    def media_inicial(self, y: np.ndarray) -> float:
        return float(np.mean(y))


class FamiliaGaussiana(FamiliaGLM):
    nombre = "identidad"

    def inversa(self, eta):
        return eta

    def enlace(self, mu):
        return mu

    def derivada_media(self, mu):
        return np.ones_like(mu)

    def varianza(self, mu):
        return np.ones_like(mu)

    def desviacion(self, y, mu):
        return float(np.sum((y - mu) ** 2))


class FamiliaBinomial(FamiliaGLM):
    nombre = "logistico"

    def inversa(self, eta):
        return expit(eta)

    def enlace(self, mu):
        return np.log(mu / (1.0 - mu))

    def derivada_media(self, mu):
        mu = np.clip(mu, 1e-15, 1.0 - 1e-15)
        return mu * (1.0 - mu)

    def varianza(self, mu):
        mu = np.clip(mu, 1e-15, 1.0 - 1e-15)
        return mu * (1.0 - mu)

    def desviacion(self, y, mu):
        mu = np.clip(mu, 1e-300, 1.0 - 1e-16)
        return float(-2.0 * np.sum(xlogy(y, mu) + xlogy(1.0 - y, 1.0 - mu)))

    def media_inicial(self, y):
        return float(np.clip(np.mean(y), 1e-6, 1.0 - 1e-6))


class FamiliaPoisson(FamiliaGLM):
    nombre = "poisson"

    def inversa(self, eta):
        return np.exp(np.minimum(eta, 700.0))

    def enlace(self, mu):
        return np.log(mu)

    def derivada_media(self, mu):
        return mu

    def varianza(self, mu):
        return mu

    def desviacion(self, y, mu):
        return float(2.0 * np.sum(xlogy(y, y / mu) - (y - mu)))

    def media_inicial(self, y):
        return float(max(np.mean(y), 1e-6))


class FamiliaBinomialNegativa(FamiliaPoisson):
    """NB2 con enlace log y dispersión α fija: Var(y) = μ + αμ²"""

    nombre = "binomial_negativa"

    def __init__(self, alfa: float):
        self.alfa = float(alfa)

    def varianza(self, mu):
        return mu + self.alfa * mu ** 2

    def desviacion(self, y, mu):
        r = 1.0 / self.alfa
        return float(2.0 * np.sum(xlogy(y, y / mu) - (y + r) * np.log((y + r) / (mu + r))))


FAMILIAS_GLM = {
    "identidad": FamiliaGaussiana,
    "logistico": FamiliaBinomial,
    "poisson": FamiliaPoisson,
}


class ResultadoIRLS:
    """
    Resultado de un ajuste por mínimos cuadrados iterativamente reponderados

    Attributes:
        beta: coeficientes (intercepto primero si la matriz lo incluye)
        iteraciones: iteraciones realizadas
        norma_gradiente: norma infinito del score en la solución
        convergio: si se alcanzó la tolerancia
        desviaciones: desviación en cada iteración (no creciente)
        uso_ridge: si alguna iteración necesitó el respaldo ridge
    """

    def __init__(self, beta, iteraciones, norma_gradiente, convergio, desviaciones, uso_ridge):
        self.beta = beta
        self.iteraciones = iteraciones
        self.norma_gradiente = norma_gradiente
        self.convergio = convergio
        self.desviaciones = desviaciones
        self.uso_ridge = uso_ridge


def _resolver_ponderado(X: np.ndarray, w: np.ndarray, z: np.ndarray) -> Tuple[np.ndarray, bool]:
    gram = X.T @ (w[:, None] * X)
    derecha = X.T @ (w * z)
    uso_ridge = False
    if not np.all(np.isfinite(gram)) or np.linalg.cond(gram) > CONDICION_MAXIMA:
        gram = gram + RIDGE_IRLS * np.eye(gram.shape[0])
        uso_ridge = True
    try:
        return linalg.solve(gram, derecha, assume_a="sym"), uso_ridge
    except (linalg.LinAlgError, ValueError):
        raise ErrorModelo("Matriz de diseño ponderada singular aun con el respaldo ridge")


def irls(X: np.ndarray, y: np.ndarray, familia: FamiliaGLM,
         beta_inicial: Optional[np.ndarray] = None,
         tolerancia: float = TOLERANCIA_IRLS,
         max_iteraciones: int = MAX_ITERACIONES_IRLS) -> ResultadoIRLS:
    """
    Ajusta un GLM por IRLS con reducción del paso a la mitad

    El criterio de parada es ‖Xᵀ r‖∞ ≤ tolerancia·max(1, ‖Xᵀy‖∞), con r el
    residuo de trabajo ponderado; la desviación nunca aumenta entre iteraciones.

    Args:
        X: matriz de diseño con la columna de intercepto incluida
        y: respuesta
        familia: familia y enlace
        beta_inicial: punto de partida; por defecto solo el intercepto en g(ȳ)

    Returns:
        ResultadoIRLS

    Raises:
        ErrorModelo: si la matriz ponderada es singular aun con ridge
    """
    n, p = X.shape
    if beta_inicial is None:
        beta = np.zeros(p)
        beta[0] = familia.enlace(np.array([familia.media_inicial(y)]))[0]
    else:
        beta = np.array(beta_inicial, dtype=float)

    escala = max(1.0, float(np.max(np.abs(X.T @ y))) if n else 1.0)
    mu = familia.inversa(X @ beta)
    desviaciones = [familia.desviacion(y, mu)]
    uso_ridge = False
    norma = math.inf
    convergio = False
    iteracion = 0

    for iteracion in range(max_iteraciones + 1):
        eta = X @ beta
        mu = familia.inversa(eta)
        derivada = familia.derivada_media(mu)
        varianza = familia.varianza(mu)
        score = X.T @ ((y - mu) * derivada / varianza)
        norma = float(np.max(np.abs(score)))
        if norma <= tolerancia * escala:
            convergio = True
            break
        if iteracion == max_iteraciones or np.linalg.norm(beta) > NORMA_SEPARACION:
            break

        w = derivada ** 2 / varianza
        z = eta + (y - mu) / derivada
        propuesta, ridge = _resolver_ponderado(X, w, z)
        uso_ridge = uso_ridge or ridge

        desviacion_previa = desviaciones[-1]
        paso = propuesta - beta
        holgura = 1e-12 * max(1.0, abs(desviacion_previa))
        for _ in range(40):
            candidato = beta + paso
            desviacion = familia.desviacion(y, familia.inversa(X @ candidato))
            if np.isfinite(desviacion) and desviacion <= desviacion_previa + holgura:
                break
            paso = paso / 2.0
        else:
            logger.debug("IRLS sin descenso tras reducir el paso; se detiene en la iteración %d", iteracion)
            break
        beta = candidato
        desviaciones.append(desviacion)

    return ResultadoIRLS(beta, iteracion, norma, convergio, desviaciones, uso_ridge)


def log_verosimilitud_nb(y: np.ndarray, mu: np.ndarray, alfa: float) -> float:
    """Log-verosimilitud NB2 completa"""
    r = 1.0 / alfa
    return float(np.sum(gammaln(y + r) - gammaln(r) - gammaln(y + 1.0)
                        + r * np.log(r / (r + mu)) + xlogy(y, mu / (r + mu))))


def _derivadas_log_alfa(y: np.ndarray, mu: np.ndarray, log_alfa: float) -> Tuple[float, float]:
    """Primera y segunda derivada de la log-verosimilitud respecto de log α"""
    r = math.exp(-log_alfa)
    d_r = np.sum(digamma(y + r) - digamma(r) + np.log(r / (r + mu)) + (mu - y) / (r + mu))
    d_rr = np.sum(polygamma(1, y + r) - polygamma(1, r) + 1.0 / r - 1.0 / (r + mu)
                  - (mu - y) / (r + mu) ** 2)
    # r = exp(-log α)
    return float(-r * d_r), float(r * d_r + r ** 2 * d_rr)


def _newton_dispersion(y: np.ndarray, mu: np.ndarray, log_alfa: float,
                       max_pasos: int = 50) -> float:
    piso = math.log(DISPERSION_MINIMA)
    actual = log_verosimilitud_nb(y, mu, math.exp(log_alfa))
    for _ in range(max_pasos):
        primera, segunda = _derivadas_log_alfa(y, mu, log_alfa)
        paso = -primera / segunda if segunda < 0 else math.copysign(1.0, primera)
        paso = float(np.clip(paso, -5.0, 5.0))
        for _ in range(30):
            candidato = max(log_alfa + paso, piso)
            valor = log_verosimilitud_nb(y, mu, math.exp(candidato))
            if valor >= actual - 1e-12 * max(1.0, abs(actual)):
                break
            paso /= 2.0
        else:
            break
        movimiento = abs(candidato - log_alfa)
        log_alfa, actual = candidato, valor
        if movimiento < 1e-10 or (log_alfa == piso and primera < 0):
            break
    return log_alfa


def ajustar_binomial_negativa(X: np.ndarray, y: np.ndarray,
                              max_iteraciones: int = MAX_ITERACIONES_IRLS) -> Tuple[ResultadoIRLS, float]:
    """
    Ajusta una regresión binomial negativa (NB2, enlace log) con dispersión desconocida

    Alterna IRLS para los coeficientes con Newton unidimensional sobre log α.
    α arranca por el método de momentos sobre un ajuste Poisson y nunca baja de 1e-6.

    Returns:
        tupla (resultado IRLS de los coeficientes, dispersión α)
    """
    resultado = irls(X, y, FamiliaPoisson(), max_iteraciones=max_iteraciones)
    mu = FamiliaPoisson().inversa(X @ resultado.beta)
    alfa = float(np.sum((y - mu) ** 2 - mu) / np.sum(mu ** 2))
    log_alfa = math.log(max(alfa, DISPERSION_MINIMA))

    for _ in range(max_iteraciones):
        resultado = irls(X, y, FamiliaBinomialNegativa(math.exp(log_alfa)),
                         beta_inicial=resultado.beta, max_iteraciones=max_iteraciones)
        mu = FamiliaPoisson().inversa(X @ resultado.beta)
        nuevo = _newton_dispersion(y, mu, log_alfa)
        cambio = abs(nuevo - log_alfa)
        log_alfa = nuevo
        if cambio < 1e-8 and resultado.convergio:
            break

    resultado = irls(X, y, FamiliaBinomialNegativa(math.exp(log_alfa)),
                     beta_inicial=resultado.beta, max_iteraciones=max_iteraciones)
    return resultado, math.exp(log_alfa)


def podar_colineales(matriz: np.ndarray, tolerancia: float = TOLERANCIA_PODA) -> Tuple[List[int], List[int]]:
    """
    Elige columnas linealmente independientes entre sí y del intercepto

    Las columnas se centran y se ordenan por QR con pivoteo; se descartan las
    que tienen pivote relativo menor que la tolerancia.

    Returns:
        tupla (índices conservados en orden creciente, índices descartados)
    """
    p = matriz.shape[1]
    if p == 0:
        return [], []
    centrada = matriz - matriz.mean(axis=0)
    _, r, pivotes = linalg.qr(centrada, mode="economic", pivoting=True)
    diagonal = np.abs(np.diag(r))
    if diagonal.size == 0 or diagonal[0] == 0:
        return [], list(range(p))
    rango = int(np.sum(diagonal > tolerancia * diagonal[0]))
    conservados = sorted(int(j) for j in pivotes[:rango])
    descartados = sorted(int(j) for j in pivotes[rango:])
    return conservados, descartados


class BosqueRegresion:
    """
    Bosque de árboles de regresión agregados por bootstrap

    Attributes:
        num_arboles: cantidad de árboles
        min_hoja: mínimo de observaciones por hoja
        max_atributos: atributos candidatos en cada corte (por defecto ⌈d/3⌉)
    """

    def __init__(self, num_arboles: int = 100, min_hoja: int = 5,
                 max_atributos: Optional[int] = None):
        self.num_arboles = int(num_arboles)
        self.min_hoja = int(min_hoja)
        self.max_atributos = max_atributos
        self.arboles: List[DecisionTreeRegressor] = []

    def ajustar(self, X: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> 'BosqueRegresion':
        n, d = X.shape
        max_atributos = self.max_atributos or max(1, math.ceil(d / 3))
        self.arboles = []
        for _ in range(self.num_arboles):
            muestra = rng.integers(n, size=n)
            arbol = DecisionTreeRegressor(max_features=max_atributos,
                                          min_samples_leaf=self.min_hoja,
                                          random_state=int(rng.integers(2 ** 31 - 1)))
            arbol.fit(X[muestra], y[muestra])
            self.arboles.append(arbol)
        return self

    def predecir(self, X: np.ndarray) -> np.ndarray:
        if not self.arboles:
            raise ErrorModelo("El bosque no fue ajustado")
        return np.mean([arbol.predict(X) for arbol in self.arboles], axis=0)


class EspecificacionModelo:
    """
    Familia y diseño de un modelo de trabajo

    Attributes:
        familia: una de FAMILIAS
        incluir_estratos: agrega los indicadores de estrato al diseño (solo familias paramétricas)
        covariables: nombres de las covariables usadas; None usa todas
        parametros: hiperparámetros (bosque: num_arboles, min_hoja, max_atributos;
            oráculo: funcion)
    """

    def __init__(self, familia: str, incluir_estratos: Optional[bool] = None,
                 covariables: Optional[List[str]] = None,
                 parametros: Optional[Dict] = None):
        if familia not in FAMILIAS:
            raise ErrorModelo(f"Familia de modelo no soportada: {familia}")
        self.familia = familia
        if incluir_estratos is None:
            incluir_estratos = familia in FAMILIAS_PARAMETRICAS
        self.incluir_estratos = bool(incluir_estratos) and familia in FAMILIAS_PARAMETRICAS
        self.covariables = None if covariables is None else list(covariables)
        self.parametros = dict(parametros or {})
        if familia == "bosque":
            desconocidos = set(self.parametros) - {"num_arboles", "min_hoja", "max_atributos"}
            if desconocidos:
                raise ErrorModelo(f"Parámetros del bosque desconocidos: {sorted(desconocidos)}")

    @property
    def es_canonico(self) -> bool:
        return self.familia in FAMILIAS_CANONICAS

    def con_funcion_oraculo(self, funcion: Callable[[np.ndarray], np.ndarray]) -> 'EspecificacionModelo':
        parametros = dict(self.parametros, funcion=funcion)
        return EspecificacionModelo("oraculo", False, self.covariables, parametros)

    def to_dict(self) -> Dict:
        parametros = {clave: valor for clave, valor in self.parametros.items() if clave != "funcion"}
        return {"familia": self.familia, "incluir_estratos": self.incluir_estratos,
                "covariables": self.covariables, "parametros": parametros}

    def __str__(self) -> str:
        return self.familia + ("+Z" if self.incluir_estratos else "")


class ModeloBrazo:
    """
    Ajuste de un brazo

    Attributes:
        coeficientes: (intercepto, pendientes...) con ceros en columnas descartadas, si es paramétrico
        nombres: nombre de cada coeficiente
        dispersion: α de la binomial negativa
        info: iteraciones, norma del gradiente, uso de ridge y columnas descartadas
    """

    def __init__(self, familia: str, coeficientes: Optional[np.ndarray] = None,
                 nombres: Optional[List[str]] = None, dispersion: Optional[float] = None,
                 bosque: Optional[BosqueRegresion] = None, info: Optional[Dict] = None):
        self.familia = familia
        self.coeficientes = coeficientes
        self.nombres = nombres or []
        self.dispersion = dispersion
        self.bosque = bosque
        self.info = info or {}

    def predecir(self, diseno: np.ndarray) -> np.ndarray:
        if self.familia == "cero":
            return np.zeros(diseno.shape[0])
        if self.familia == "bosque":
            return self.bosque.predecir(diseno)
        eta = self.coeficientes[0] + diseno @ self.coeficientes[1:]
        if self.familia in ("lineal", "identidad"):
            return eta
        if self.familia == "logistico":
            return expit(eta)
        return np.exp(np.minimum(eta, 700.0))

    def to_dict(self) -> Dict:
        data = {"familia": self.familia, "info": self.info}
        if self.coeficientes is not None:
            data["coeficientes"] = dict(zip(self.nombres, self.coeficientes.tolist()))
        if self.dispersion is not None:
            data["dispersion"] = self.dispersion
        return data


class AjusteBase:
    """Interfaz común: predicciones n×k de μ̂ₐ(Xᵢ) para cada brazo"""

    def predecir(self, covariables: np.ndarray, estratos: Optional[np.ndarray] = None) -> np.ndarray:
        raise NotImplementedError

    def predecir_ensayo(self, ensayo: EnsayoClinico) -> np.ndarray:
        return self.predecir(np.asarray(ensayo.covariables), np.asarray(ensayo.estratos))


class AjusteModelo(AjusteBase):
    """
    Modelo de trabajo ajustado, un modelo por brazo

    Attributes:
        especificacion: familia y diseño
        modelos: ajuste de cada brazo
        indices: columnas de covariables usadas
        num_covariables: columnas del ensayo de entrenamiento
        num_estratos: niveles de estrato del ensayo de entrenamiento
        pliegue: índice del pliegue (solo en ajuste cruzado)
    """

    def __init__(self, especificacion: EspecificacionModelo, modelos: List[ModeloBrazo],
                 indices: List[int], num_covariables: int, num_estratos: int,
                 pliegue: Optional[int] = None):
        self.especificacion = especificacion
        self.modelos = modelos
        self.indices = indices
        self.num_covariables = num_covariables
        self.num_estratos = num_estratos
        self.pliegue = pliegue

    @property
    def k(self) -> int:
        return len(self.modelos)

    def diseno(self, covariables: np.ndarray, estratos: Optional[np.ndarray]) -> np.ndarray:
        """Matriz de diseño sin intercepto para nuevas filas"""
        covariables = np.asarray(covariables, dtype=float)
        if covariables.ndim != 2 or covariables.shape[1] != self.num_covariables:
            raise ErrorModelo(f"Se esperaban {self.num_covariables} columnas de covariables "
                              f"y llegaron {covariables.shape[-1]}")
        columnas = covariables[:, self.indices]
        if self.especificacion.incluir_estratos:
            if estratos is None:
                raise ErrorModelo("El modelo incluye indicadores de estrato y no se pasaron estratos")
            estratos = np.asarray(estratos, dtype=int)
            indicadores = np.zeros((estratos.size, max(self.num_estratos - 1, 0)))
            for nivel in range(1, self.num_estratos):
                indicadores[:, nivel - 1] = (estratos == nivel)
            columnas = np.hstack([columnas, indicadores])
        return columnas

    def predecir(self, covariables: np.ndarray, estratos: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Predicciones de todos los brazos

        Args:
            covariables: matriz con las mismas columnas que el ensayo de entrenamiento
            estratos: niveles de estrato de cada fila (si el diseño los incluye)

        Returns:
            matriz n×k

        Raises:
            ErrorModelo: si las columnas no coinciden
        """
        if self.especificacion.familia == "oraculo":
            covariables = np.asarray(covariables, dtype=float)
            if covariables.shape[1] != self.num_covariables:
                raise ErrorModelo("Columnas de covariables incompatibles con el oráculo")
            return np.asarray(self.especificacion.parametros["funcion"](covariables), dtype=float)
        diseno = self.diseno(covariables, estratos)
        return np.column_stack([modelo.predecir(diseno) for modelo in self.modelos])

    def to_dict(self) -> Dict:
        return {
            "modelo": self.especificacion.to_dict(),
            "pliegue": self.pliegue,
            "brazos": [modelo.to_dict() for modelo in self.modelos],
        }


class AjusteCalibradoZ(AjusteBase):
    """Ajuste con la media de residuos de cada celda (estrato, brazo) sumada a la predicción"""

    def __init__(self, base: AjusteBase, correcciones: np.ndarray):
        self.base = base
        self.correcciones = correcciones

    def predecir(self, covariables, estratos=None):
        if estratos is None:
            raise ErrorModelo("La calibración por estrato necesita los estratos de cada fila")
        return self.base.predecir(covariables, estratos) + self.correcciones[np.asarray(estratos, dtype=int)]


class AjusteCalibradoLineal(AjusteBase):
    """
    Ajuste reemplazado por combinaciones lineales de las predicciones de todos los brazos

    Attributes:
        coeficientes: matriz k×k; la columna a da la predicción calibrada del brazo a
        descartadas: columnas de μ̂ podadas por colinealidad en cada brazo
        degenerado: brazos donde se podaron todas las columnas (predicción 0)
    """

    def __init__(self, base: AjusteBase, coeficientes: np.ndarray,
                 descartadas: List[List[int]], degenerado: List[bool]):
        self.base = base
        self.coeficientes = coeficientes
        self.descartadas = descartadas
        self.degenerado = degenerado

    def predecir(self, covariables, estratos=None):
        return self.base.predecir(covariables, estratos) @ self.coeficientes


def _validar_respuesta(familia: str, y: np.ndarray, brazo: int) -> None:
    if familia == "logistico" and not np.all((y == 0) | (y == 1)):
        raise ErrorModelo(f"El modelo logístico necesita respuesta binaria (brazo {brazo + 1})")
    if familia in ("poisson", "binomial_negativa"):
        if np.any(y < 0) or not np.all(np.equal(np.mod(y, 1), 0)):
            raise ErrorModelo(f"El modelo '{familia}' necesita conteos enteros no negativos (brazo {brazo + 1})")


def _ajustar_parametrico(familia: str, diseno: np.ndarray, y: np.ndarray,
                         nombres: List[str], brazo: int) -> ModeloBrazo:
    conservadas, descartadas = podar_colineales(diseno)
    if descartadas:
        logger.debug("Brazo %d: columnas colineales descartadas %s",
                     brazo + 1, [nombres[j] for j in descartadas])
    X = np.hstack([np.ones((diseno.shape[0], 1)), diseno[:, conservadas]])
    if y.size < X.shape[1] + 1:
        raise ErrorModelo(f"El brazo {brazo + 1} tiene {y.size} pacientes para "
                          f"{X.shape[1] - 1} columnas de diseño")

    dispersion = None
    if familia == "lineal":
        beta, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
        info = {"iteraciones": 0, "uso_ridge": False}
    else:
        if familia == "binomial_negativa":
            resultado, dispersion = ajustar_binomial_negativa(X, y)
        else:
            resultado = irls(X, y, FAMILIAS_GLM[familia]())
        beta = resultado.beta
        eta = X @ beta
        if np.linalg.norm(beta) > NORMA_SEPARACION or (
                familia == "logistico" and np.max(np.abs(eta)) > ETA_SATURADO):
            raise ErrorModelo(f"cuasi-separación en el modelo {familia} del brazo {brazo + 1}",
                              resultado.norma_gradiente)
        if not resultado.convergio:
            raise ErrorModelo(f"IRLS no convergió en el brazo {brazo + 1} "
                              f"(norma del gradiente {resultado.norma_gradiente:.3g})",
                              resultado.norma_gradiente)
        if resultado.uso_ridge:
            logger.warning("Brazo %d: matriz ponderada mal condicionada, se usó ridge %.0e",
                           brazo + 1, RIDGE_IRLS)
        info = {"iteraciones": resultado.iteraciones,
                "norma_gradiente": resultado.norma_gradiente,
                "uso_ridge": resultado.uso_ridge}

    coeficientes = np.zeros(diseno.shape[1] + 1)
    coeficientes[0] = beta[0]
    coeficientes[1 + np.asarray(conservadas, dtype=int)] = beta[1:]
    info["descartadas"] = [nombres[j] for j in descartadas]
    return ModeloBrazo(familia, coeficientes, ["(intercepto)"] + nombres,
                       dispersion=dispersion, info=info)


def ajustar(especificacion: EspecificacionModelo, ensayo: EnsayoClinico,
            filas: Optional[np.ndarray] = None, rng: Optional[np.random.Generator] = None,
            pliegue: Optional[int] = None) -> AjusteModelo:
    """
    Ajusta un modelo independiente por brazo

    Args:
        especificacion: familia y diseño
        ensayo: ensayo de entrenamiento
        filas: subconjunto de pacientes; por defecto todos
        rng: generador para el bosque
        pliegue: índice del pliegue, solo como procedencia

    Returns:
        AjusteModelo

    Raises:
        ErrorModelo: si un brazo no tiene datos suficientes, la respuesta no es
            compatible con la familia o el ajuste falla
    """
    if especificacion.covariables is None:
        indices = list(range(ensayo.d))
    else:
        faltantes = [c for c in especificacion.covariables if c not in ensayo.nombres_covariables]
        if faltantes:
            raise ErrorModelo(f"Covariables desconocidas en el modelo: {faltantes}")
        indices = [ensayo.nombres_covariables.index(c) for c in especificacion.covariables]

    filas = np.arange(ensayo.n) if filas is None else np.asarray(filas, dtype=int)
    ajuste = AjusteModelo(especificacion, [], indices, ensayo.d, ensayo.num_estratos, pliegue)
    familia = especificacion.familia
    if familia == "oraculo":
        if not callable(especificacion.parametros.get("funcion")):
            raise ErrorModelo("El modelo oráculo necesita la función de medias verdaderas")
        return ajuste

    diseno = ajuste.diseno(ensayo.covariables[filas], ensayo.estratos[filas])
    nombres = [ensayo.nombres_covariables[j] for j in indices]
    if especificacion.incluir_estratos:
        nombres += [f"estrato_{nivel + 1}" for nivel in range(1, ensayo.num_estratos)]
    brazos = ensayo.brazo[filas]
    respuesta = ensayo.respuesta[filas]
    if rng is None:
        rng = np.random.default_rng(0)

    for a in range(ensayo.k):
        en_brazo = brazos == a
        y = respuesta[en_brazo]
        if y.size == 0:
            raise ErrorModelo(f"El brazo {a + 1} no tiene pacientes para ajustar el modelo")
        if familia == "cero":
            ajuste.modelos.append(ModeloBrazo("cero"))
        elif familia == "bosque":
            if diseno.shape[1] == 0:
                raise ErrorModelo("El bosque necesita al menos una covariable")
            bosque = BosqueRegresion(**especificacion.parametros)
            bosque.ajustar(diseno[en_brazo], y, rng)
            ajuste.modelos.append(ModeloBrazo("bosque", bosque=bosque))
        else:
            _validar_respuesta(familia, y, a)
            ajuste.modelos.append(_ajustar_parametrico(familia, diseno[en_brazo], y, nombres, a))

    entrenamiento = ajuste.predecir(ensayo.covariables[filas], ensayo.estratos[filas])
    if not np.all(np.isfinite(entrenamiento)):
        raise ErrorModelo("El modelo produjo predicciones no finitas en el entrenamiento")
    return ajuste


def brechas_prediccion(mu: np.ndarray, ensayo: EnsayoClinico) -> np.ndarray:
    """ȳₐ − (1/nₐ)Σ_{i:Aᵢ=a} μ̂ₐ(Xᵢ) para cada brazo"""
    ensayo.verificar_brazos_no_vacios()
    return np.array([np.mean(ensayo.respuesta[ensayo.brazo == a] - mu[ensayo.brazo == a, a])
                     for a in range(ensayo.k)])


def verificar_insesgadez_prediccion(ajuste: AjusteBase, ensayo: EnsayoClinico,
                                    tolerancia: float = 1e-8) -> Dict:
    """
    Verifica la insesgadez de predicción de cada brazo

    Args:
        ajuste: modelo ajustado
        ensayo: ensayo donde se evalúa
        tolerancia: cota para |brecha|

    Returns:
        diccionario con 'insesgado' (booleano por brazo) y 'brecha' (ȳₐ − media de μ̂ₐ en el brazo a)
    """
    brecha = brechas_prediccion(ajuste.predecir_ensayo(ensayo), ensayo)
    return {"insesgado": np.abs(brecha) <= tolerancia, "brecha": brecha}


def correcciones_z(mu: np.ndarray, ensayo: EnsayoClinico) -> np.ndarray:
    """
    Media de los residuos de cada celda (estrato, brazo)

    Returns:
        matriz L×k de correcciones

    Raises:
        ErrorEstimacion: si alguna celda (estrato, brazo) está vacía
    """
    correcciones = np.zeros((ensayo.num_estratos, ensayo.k))
    for z in range(ensayo.num_estratos):
        for a in range(ensayo.k):
            celda = (ensayo.estratos == z) & (ensayo.brazo == a)
            if not np.any(celda):
                raise ErrorEstimacion(f"Celda vacía: estrato {ensayo.etiqueta_estrato(z)}, brazo {a + 1}")
            correcciones[z, a] = np.mean(ensayo.respuesta[celda] - mu[celda, a])
    return correcciones


def calibrar_z(ajuste: AjusteBase, ensayo: EnsayoClinico) -> AjusteCalibradoZ:
    """
    Calibración interna por estrato: μ̂ₐ + media de (y − μ̂ₐ) en la celda del paciente

    Después de calibrar, el residuo medio de cada celda (estrato, brazo) es 0.
    """
    return AjusteCalibradoZ(ajuste, correcciones_z(ajuste.predecir_ensayo(ensayo), ensayo))
