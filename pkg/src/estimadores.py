"""
Estimadores puntuales de las medias por brazo: media muestral, g-computación,
AIPW, AIPW con ajuste cruzado y sus versiones calibradas
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.model_selection import KFold

try:
    from .datos import Contraste, EnsayoClinico
    from .errores import ErrorEstimacion, ErrorModelo
    from .modelos_trabajo import (AjusteBase, AjusteCalibradoLineal,
                                  EspecificacionModelo, ajustar, podar_colineales)
except ImportError:
    from datos import Contraste, EnsayoClinico
    from errores import ErrorEstimacion, ErrorModelo
    from modelos_trabajo import (AjusteBase, AjusteCalibradoLineal,
                                 EspecificacionModelo, ajustar, podar_colineales)

logger = logging.getLogger(__name__)

MODOS_PI_PLIEGUE = ("pliegue", "global")


class PlanPliegues:
    """
    Partición aleatoria de los pacientes en J pliegues

    Attributes:
        num_pliegues: J
        asignacion: pliegue (0..J-1) de cada paciente
    """

    def __init__(self, asignacion: Sequence[int]):
        self.asignacion = np.asarray(asignacion, dtype=int)
        self.num_pliegues = int(self.asignacion.max()) + 1
        if self.num_pliegues < 2:
            raise ErrorEstimacion("El ajuste cruzado necesita al menos 2 pliegues")
        if set(np.unique(self.asignacion)) != set(range(self.num_pliegues)):
            raise ErrorEstimacion("Hay pliegues sin pacientes")

    @classmethod
    def crear(cls, n: int, num_pliegues: int, rng: np.random.Generator) -> 'PlanPliegues':
        """Partición con tamaños que difieren a lo sumo en 1"""
        if num_pliegues < 2 or num_pliegues > n:
            raise ErrorEstimacion(f"Cantidad de pliegues inválida: {num_pliegues} para n={n}")
        divisor = KFold(n_splits=num_pliegues, shuffle=True,
                        random_state=int(rng.integers(2 ** 31 - 1)))
        asignacion = np.empty(n, dtype=int)
        for j, (_, prueba) in enumerate(divisor.split(np.zeros((n, 1)))):
            asignacion[prueba] = j
        return cls(asignacion)

    def filas(self, pliegue: int) -> np.ndarray:
        return np.flatnonzero(self.asignacion == pliegue)

    def complemento(self, pliegue: int) -> np.ndarray:
        return np.flatnonzero(self.asignacion != pliegue)

    @property
    def tamanos(self) -> np.ndarray:
        return np.bincount(self.asignacion, minlength=self.num_pliegues)

    def reordenar(self, permutacion: Sequence[int]) -> 'PlanPliegues':
        return PlanPliegues(self.asignacion[np.asarray(permutacion, dtype=int)])


class EstimacionTheta:
    """
    Estimación del vector de medias por brazo

    Attributes:
        theta: k estimaciones
        metodo: etiqueta del estimador (p. ej. 'aipw', 'cruzado+conjunta')
        mu: matriz n×k de predicciones usadas (cosidas fuera de pliegue en ajuste cruzado)
        plan: partición en pliegues (solo ajuste cruzado)
        pi_pliegue: π̂ usado en cada pliegue, matriz J×k (solo ajuste cruzado)
        calibracion: registro de la calibración aplicada (coeficientes, columnas descartadas)
        modo_pi: 'pliegue' o 'global' (solo ajuste cruzado)
        ajuste: resumen del modelo de trabajo ajustado (coeficientes, columnas descartadas)
    """

    def __init__(self, theta: np.ndarray, metodo: str, mu: np.ndarray,
                 plan: Optional[PlanPliegues] = None,
                 pi_pliegue: Optional[np.ndarray] = None,
                 calibracion: Optional[Dict] = None,
                 modo_pi: Optional[str] = None,
                 ajuste: Optional[Dict] = None):
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            raise ErrorEstimacion(f"Estimación no finita con el método {metodo}: {theta.tolist()}")
        self.theta = theta
        self.metodo = metodo
        self.mu = np.asarray(mu, dtype=float)
        self.plan = plan
        self.pi_pliegue = pi_pliegue
        self.calibracion = calibracion
        self.modo_pi = modo_pi if plan is not None else None
        self.ajuste = ajuste

    @property
    def es_cruzado(self) -> bool:
        return self.plan is not None

    def to_dict(self) -> Dict:
        data = {"metodo": self.metodo, "theta": self.theta.tolist()}
        if self.plan is not None:
            data["pliegues"] = self.plan.num_pliegues
            data["tamanos_pliegues"] = self.plan.tamanos.tolist()
        if self.calibracion is not None:
            data["calibracion"] = {clave: valor for clave, valor in self.calibracion.items()
                                   if clave not in ("matriz_w",)}
        if self.ajuste is not None:
            data["ajuste"] = self.ajuste
        return data

    def __repr__(self) -> str:
        return f"EstimacionTheta({self.metodo}, theta={np.round(self.theta, 6).tolist()})"


def _predicciones(fuente: Union[AjusteBase, np.ndarray], ensayo: EnsayoClinico) -> np.ndarray:
    if isinstance(fuente, AjusteBase):
        mu = fuente.predecir_ensayo(ensayo)
    else:
        mu = np.asarray(fuente, dtype=float)
    if mu.shape != (ensayo.n, ensayo.k):
        raise ErrorEstimacion(f"Las predicciones deben ser {ensayo.n}×{ensayo.k}, llegaron {mu.shape}")
    if not np.all(np.isfinite(mu)):
        raise ErrorEstimacion("Hay predicciones no finitas")
    return mu


def media_muestral(ensayo: EnsayoClinico) -> EstimacionTheta:
    """
    Media de la respuesta en cada brazo

    Raises:
        ErrorEstimacion: si algún brazo está vacío
    """
    return EstimacionTheta(ensayo.medias_por_brazo(), "media", np.zeros((ensayo.n, ensayo.k)))


def g_computacion(ensayo: EnsayoClinico, fuente: Union[AjusteBase, np.ndarray]) -> EstimacionTheta:
    """θ̂ₐ = (1/n)Σᵢ μ̂ₐ(Xᵢ)"""
    mu = _predicciones(fuente, ensayo)
    return EstimacionTheta(mu.mean(axis=0), "gcomp", mu)


def _aipw_matriz(ensayo: EnsayoClinico, mu: np.ndarray) -> np.ndarray:
    ensayo.verificar_brazos_no_vacios()
    theta = np.empty(ensayo.k)
    for a in range(ensayo.k):
        en_brazo = ensayo.brazo == a
        theta[a] = (np.mean(ensayo.respuesta[en_brazo]) - np.mean(mu[en_brazo, a])
                    + np.mean(mu[:, a]))
    return theta


def aipw(ensayo: EnsayoClinico, fuente: Union[AjusteBase, np.ndarray]) -> EstimacionTheta:
    """
    Estimador aumentado por ponderación inversa de la propensión

    θ̂ₐ = ȳₐ − (1/nₐ)Σ_{i:Aᵢ=a} μ̂ₐ(Xᵢ) + (1/n)Σᵢ μ̂ₐ(Xᵢ)

    Args:
        ensayo: ensayo observado
        fuente: modelo ajustado o matriz n×k de predicciones

    Raises:
        ErrorEstimacion: si algún brazo está vacío
    """
    mu = _predicciones(fuente, ensayo)
    return EstimacionTheta(_aipw_matriz(ensayo, mu), "aipw", mu)


def predicciones_cruzadas(ensayo: EnsayoClinico, especificacion: EspecificacionModelo,
                          plan: PlanPliegues, rng: Optional[np.random.Generator] = None,
                          ajustes: Optional[List[AjusteBase]] = None) -> Tuple[np.ndarray, List[AjusteBase]]:
    """
    Predicciones fuera de pliegue cosidas en una matriz n×k

    Args:
        ensayo: ensayo observado
        especificacion: modelo a ajustar en el complemento de cada pliegue
        plan: partición en pliegues
        rng: generador para modelos aleatorios
        ajustes: un ajuste ya hecho por pliegue (se usa en lugar de ajustar)

    Returns:
        tupla (matriz cosida, ajustes por pliegue)

    Raises:
        ErrorModelo: si falla el ajuste en algún pliegue
    """
    mu = np.empty((ensayo.n, ensayo.k))
    usados = []
    for j in range(plan.num_pliegues):
        filas = plan.filas(j)
        if ajustes is not None:
            ajuste = ajustes[j]
        else:
            try:
                ajuste = ajustar(especificacion, ensayo, plan.complemento(j), rng=rng, pliegue=j)
            except ErrorModelo as e:
                raise ErrorModelo(f"Pliegue {j + 1}: {e}", getattr(e, "norma_gradiente", None))
        mu[filas] = ajuste.predecir(ensayo.covariables[filas], ensayo.estratos[filas])
        usados.append(ajuste)
    return mu, usados


def estimador_cruzado(ensayo: EnsayoClinico, mu: np.ndarray, plan: PlanPliegues,
                      modo_pi: str = "pliegue") -> Tuple[np.ndarray, np.ndarray]:
    """
    Promedio sobre pliegues de (1/n⁽ʲ⁾)Σ_{i∈I_j}[I(Aᵢ=a)/π̂_{a,j}·(yᵢ − μ̂ₐ(Xᵢ)) + μ̂ₐ(Xᵢ)]

    Args:
        modo_pi: 'pliegue' usa π̂_{a,j} = nₐ⁽ʲ⁾/n⁽ʲ⁾; 'global' usa π̂ₐ = nₐ/n

    Returns:
        tupla (theta, matriz J×k de π̂ usados)

    Raises:
        ErrorEstimacion: si un brazo no tiene pacientes en algún pliegue
    """
    if modo_pi not in MODOS_PI_PLIEGUE:
        raise ErrorEstimacion(f"Modo de π̂ por pliegue desconocido: {modo_pi}")
    ensayo.verificar_brazos_no_vacios()
    J, k = plan.num_pliegues, ensayo.k
    pi_global = ensayo.n_por_brazo / ensayo.n
    pi_usado = np.empty((J, k))
    terminos = np.empty((J, k))
    for j in range(J):
        filas = plan.filas(j)
        brazos = ensayo.brazo[filas]
        residuo = ensayo.respuesta[filas][:, None] - mu[filas]
        for a in range(k):
            n_brazo = int(np.sum(brazos == a))
            if n_brazo == 0:
                raise ErrorEstimacion(f"Brazo vacío en el pliegue {j + 1}: brazo {a + 1}")
            pi_usado[j, a] = n_brazo / filas.size if modo_pi == "pliegue" else pi_global[a]
            indicador = (brazos == a) / pi_usado[j, a]
            terminos[j, a] = np.mean(indicador * residuo[:, a] + mu[filas, a])
    return terminos.mean(axis=0), pi_usado


def aipw_cruzado(ensayo: EnsayoClinico, especificacion: EspecificacionModelo,
                 plan: PlanPliegues, modo_pi: str = "pliegue",
                 rng: Optional[np.random.Generator] = None,
                 ajustes: Optional[List[AjusteBase]] = None) -> EstimacionTheta:
    """
    AIPW con ajuste cruzado: el modelo de cada pliegue se ajusta con los demás pliegues

    Args:
        ensayo: ensayo observado
        especificacion: modelo de trabajo
        plan: partición en pliegues
        modo_pi: 'pliegue' (por defecto) o 'global'
        rng: generador para modelos aleatorios
        ajustes: ajustes ya hechos por pliegue

    Raises:
        ErrorEstimacion: si un brazo no tiene pacientes en un pliegue
        ErrorModelo: si el ajuste falla en algún pliegue
    """
    mu, _ = predicciones_cruzadas(ensayo, especificacion, plan, rng, ajustes)
    theta, pi_usado = estimador_cruzado(ensayo, mu, plan, modo_pi)
    return EstimacionTheta(theta, "cruzado", mu, plan, pi_usado, modo_pi=modo_pi)


def coeficientes_lineales(mu: np.ndarray, ensayo: EnsayoClinico) -> Tuple[np.ndarray, List[List[int]], List[bool]]:
    """
    Regresión por brazo de y sobre (1, μ̂₁(X), ..., μ̂ₖ(X)) con poda de columnas colineales

    Returns:
        tupla (matriz k×k de pendientes por brazo en columnas, columnas descartadas, brazos degenerados)
    """
    ensayo.verificar_brazos_no_vacios()
    k = ensayo.k
    coeficientes = np.zeros((k, k))
    descartadas, degenerado = [], []
    for a in range(k):
        en_brazo = ensayo.brazo == a
        regresores = mu[en_brazo]
        conservadas, podadas = podar_colineales(regresores)
        descartadas.append(podadas)
        degenerado.append(not conservadas)
        if not conservadas:
            logger.warning("Calibración lineal del brazo %d: todas las columnas son colineales; "
                           "la predicción calibrada es 0", a + 1)
            continue
        X = np.hstack([np.ones((regresores.shape[0], 1)), regresores[:, conservadas]])
        beta, _, _, _ = np.linalg.lstsq(X, ensayo.respuesta[en_brazo], rcond=None)
        coeficientes[conservadas, a] = beta[1:]
    return coeficientes, descartadas, degenerado


def calibrar_lineal(ensayo: EnsayoClinico, ajuste: AjusteBase) -> AjusteCalibradoLineal:
    """
    Calibración lineal: cada brazo pasa a predecir γ̃ₐᵀμ̂(X)

    El intercepto de la regresión se descarta; AIPW no depende de él.

    Returns:
        ajuste calibrado; si todas las columnas se podan en un brazo, ese brazo predice 0
    """
    coeficientes, descartadas, degenerado = coeficientes_lineales(ajuste.predecir_ensayo(ensayo), ensayo)
    return AjusteCalibradoLineal(ajuste, coeficientes, descartadas, degenerado)


def _nombres_w(ensayo: EnsayoClinico) -> List[str]:
    return (["(intercepto)"] + [f"estrato_{nivel + 1}" for nivel in range(1, ensayo.num_estratos)]
            + [f"mu_{a + 1}" for a in range(ensayo.k)])


def calibracion_conjunta(ensayo: EnsayoClinico,
                         fuente: Union[AjusteBase, EstimacionTheta, np.ndarray]) -> EstimacionTheta:
    """
    Calibración conjunta con regresor Ŵ = (indicadores de estrato, μ̂(X))

    Por brazo se ajusta por MCO y sobre (1, Ŵ) con los pacientes del brazo; la
    predicción μ̂*ₐ = γ̂ₐᵀ(1, Ŵ) incluye el intercepto. Si la fuente es una
    estimación con ajuste cruzado se usan sus predicciones cosidas y el promedio
    sobre pliegues; en otro caso, AIPW.

    Args:
        ensayo: ensayo observado
        fuente: modelo ajustado, matriz n×k o estimación cruzada

    Returns:
        EstimacionTheta con el registro de γ̂ₐ, Γ̂ y columnas descartadas

    Raises:
        ErrorEstimacion: si una celda (estrato, brazo) está vacía o los
            indicadores de estrato resultan colineales
    """
    plan, modo_pi, metodo = None, "pliegue", "aipw+conjunta"
    if isinstance(fuente, EstimacionTheta):
        mu = fuente.mu
        if fuente.es_cruzado:
            plan, modo_pi, metodo = fuente.plan, fuente.modo_pi, "cruzado+conjunta"
    else:
        mu = _predicciones(fuente, ensayo)

    ensayo.verificar_brazos_no_vacios()
    indicadores = ensayo.indicadores_estrato()
    L, k = ensayo.num_estratos, ensayo.k
    for z in range(L):
        for a in range(k):
            if not np.any((ensayo.estratos == z) & (ensayo.brazo == a)):
                raise ErrorEstimacion(f"Celda vacía: estrato {ensayo.etiqueta_estrato(z)}, brazo {a + 1}")

    W = np.hstack([np.ones((ensayo.n, 1)), indicadores, mu])
    nombres = _nombres_w(ensayo)
    gamma = np.zeros((W.shape[1], k))
    descartadas = []
    for a in range(k):
        en_brazo = ensayo.brazo == a
        fijas = W[en_brazo, :L]
        _, podadas_z = podar_colineales(fijas[:, 1:])
        if podadas_z:
            raise ErrorEstimacion("Indicadores de estrato colineales en el brazo "
                                  f"{a + 1}: {[nombres[1 + j] for j in podadas_z]}")
        # μ̂ se poda después de proyectar sobre intercepto y estratos
        proyeccion, _, _, _ = np.linalg.lstsq(fijas, mu[en_brazo], rcond=None)
        conservadas, podadas = podar_colineales(mu[en_brazo] - fijas @ proyeccion)
        descartadas.append([nombres[L + j] for j in podadas])
        if podadas:
            logger.warning("Calibración conjunta, brazo %d: columnas de μ̂ colineales descartadas %s",
                           a + 1, descartadas[-1])
        columnas = list(range(L)) + [L + j for j in conservadas]
        beta, _, _, _ = np.linalg.lstsq(W[en_brazo][:, columnas], ensayo.respuesta[en_brazo], rcond=None)
        gamma[columnas, a] = beta

    mu_estrella = W @ gamma
    registro = {
        "tipo": "conjunta",
        "nombres": nombres,
        "gamma": gamma.T,
        "Gamma": gamma[1:],
        "descartadas": descartadas,
        "matriz_w": W[:, 1:],
    }
    if plan is not None:
        theta, pi_usado = estimador_cruzado(ensayo, mu_estrella, plan, modo_pi)
        return EstimacionTheta(theta, metodo, mu_estrella, plan, pi_usado, registro, modo_pi)
    return EstimacionTheta(_aipw_matriz(ensayo, mu_estrella), metodo, mu_estrella, calibracion=registro)


def evaluar_contraste(estimacion: EstimacionTheta, contraste: Contraste) -> float:
    """
    f(θ̂) para el contraste pedido

    Raises:
        ErrorEstimacion: si una razón tiene denominador no positivo
    """
    return contraste.evaluar(estimacion.theta)
