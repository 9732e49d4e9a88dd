"""
Estimadores de la varianza asintótica de √n(θ̂ − θ) y errores estándar por método delta
"""
import logging
import math
from typing import Dict, Optional

import numpy as np
from scipy.stats import norm

try:
    from .aleatorizacion import EspecificacionOmega
    from .datos import Contraste, EnsayoClinico
    from .errores import ErrorEstimacion, RechazoVarianza
    from .estimadores import EstimacionTheta
except ImportError:
    from aleatorizacion import EspecificacionOmega
    from datos import Contraste, EnsayoClinico
    from errores import ErrorEstimacion, RechazoVarianza
    from estimadores import EstimacionTheta

logger = logging.getLogger(__name__)

SABORES = ("robusta", "universal", "ingenua", "jc")


class ComponentesVarianza:
    """
    Piezas muestrales de la fórmula de varianza

    Attributes:
        s2: varianza muestral de y en cada brazo
        Q: Q[a, b] = covarianza de (y, μ̂_b) entre los pacientes del brazo a
        Sigma: covarianza de (μ̂₁, ..., μ̂ₖ) sobre todos los pacientes
        RY: RY[z, a] = (ȳₐ(z) − θ̂ₐ)/πₐ
        RX: RX[z, a] = (μ̄ₐ(z) − μ̄ₐ)/πₐ
        pesos: n(z)/n
        pi: proporciones objetivo
    """

    def __init__(self, s2, Q, Sigma, RY, RX, pesos, pi):
        self.s2 = s2
        self.Q = Q
        self.Sigma = Sigma
        self.RY = RY
        self.RX = RX
        self.pesos = pesos
        self.pi = pi

    @property
    def k(self) -> int:
        return int(self.s2.size)


class EstimacionCovarianza:
    """
    Estimación V̂ de la covarianza asintótica de √n(θ̂ − θ)

    Attributes:
        V: matriz k×k simétrica, guardada sin recortes
        sabor: 'robusta', 'universal', 'ingenua' o 'jc'
        no_psd: alguna entrada diagonal quedó negativa a n finito
    """

    def __init__(self, V: np.ndarray, sabor: str):
        V = np.asarray(V, dtype=float)
        self.V = (V + V.T) / 2.0
        self.sabor = sabor
        self.no_psd = bool(np.any(np.diag(self.V) < 0))
        if self.no_psd:
            logger.warning("V̂ (%s) tiene diagonal negativa a n finito: %s",
                           sabor, np.diag(self.V).tolist())

    def to_dict(self) -> Dict:
        return {"sabor": self.sabor, "V": self.V.tolist(), "no_psd": self.no_psd}


def componentes_varianza(ensayo: EnsayoClinico, estimacion: EstimacionTheta) -> ComponentesVarianza:
    """
    Calcula las piezas muestrales con denominadores n − 1 (y nₐ − 1 dentro de brazos)

    Args:
        ensayo: ensayo observado
        estimacion: estimación cuyas predicciones y θ̂ se usan

    Raises:
        ErrorEstimacion: si algún brazo tiene menos de 2 pacientes o una celda
            (estrato, brazo) está vacía
    """
    k, L = ensayo.k, ensayo.num_estratos
    mu = estimacion.mu
    y = ensayo.respuesta
    pi = ensayo.pi

    s2 = np.empty(k)
    Q = np.empty((k, k))
    for a in range(k):
        en_brazo = ensayo.brazo == a
        if np.sum(en_brazo) < 2:
            raise ErrorEstimacion(f"El brazo {a + 1} necesita al menos 2 pacientes para la varianza")
        y_brazo = y[en_brazo]
        s2[a] = np.var(y_brazo, ddof=1)
        centrada = y_brazo - y_brazo.mean()
        mu_brazo = mu[en_brazo] - mu[en_brazo].mean(axis=0)
        Q[a] = centrada @ mu_brazo / (y_brazo.size - 1)

    Sigma = np.atleast_2d(np.cov(mu, rowvar=False, ddof=1))
    mu_barra = mu.mean(axis=0)

    RY = np.empty((L, k))
    RX = np.empty((L, k))
    pesos = np.empty(L)
    for z in range(L):
        en_estrato = ensayo.estratos == z
        pesos[z] = np.mean(en_estrato)
        RX[z] = (mu[en_estrato].mean(axis=0) - mu_barra) / pi
        for a in range(k):
            celda = en_estrato & (ensayo.brazo == a)
            if not np.any(celda):
                raise ErrorEstimacion(f"Celda vacía: estrato {ensayo.etiqueta_estrato(z)}, brazo {a + 1}")
            RY[z, a] = (y[celda].mean() - estimacion.theta[a]) / pi[a]

    return ComponentesVarianza(s2, Q, Sigma, RY, RX, pesos, np.asarray(pi))


def _formula_universal(c: ComponentesVarianza) -> np.ndarray:
    diagonal = (c.s2 - 2.0 * np.diag(c.Q) + np.diag(c.Sigma)) / c.pi
    return np.diag(diagonal) + c.Q + c.Q.T - c.Sigma


def correccion_aleatorizacion(c: ComponentesVarianza, omega: EspecificacionOmega) -> np.ndarray:
    """Σ_z (n(z)/n)·D_z(Ω_SR − Ω(z))D_z con D_z = diag(RY(z) − RX(z))"""
    correccion = np.zeros((c.k, c.k))
    for z, peso in enumerate(c.pesos):
        D = np.diag(c.RY[z] - c.RX[z])
        correccion += peso * D @ omega.diferencia(z) @ D
    return correccion


def vhat_robusta(c: ComponentesVarianza, omega: EspecificacionOmega) -> EstimacionCovarianza:
    """
    V̂ con la corrección por aleatorización adaptativa

    Raises:
        RechazoVarianza: si Ω(z) no se conoce (minimización de Pocock-Simon)
    """
    if not omega.es_conocida:
        raise RechazoVarianza("La varianza robusta necesita Ω(z) conocida y el esquema no la tiene",
                              ["universal", "jc"])
    return EstimacionCovarianza(_formula_universal(c) - correccion_aleatorizacion(c, omega), "robusta")


def vhat_universal(c: ComponentesVarianza) -> EstimacionCovarianza:
    """V̂ sin el término de corrección; válida cuando la media condicional por estrato de y − μ es constante"""
    return EstimacionCovarianza(_formula_universal(c), "universal")


def vhat_ingenua(c: ComponentesVarianza) -> EstimacionCovarianza:
    """Misma fórmula que la universal, usada como si la aleatorización fuera simple"""
    return EstimacionCovarianza(_formula_universal(c), "ingenua")


def vhat_jc(ensayo: EnsayoClinico, estimacion: EstimacionTheta) -> EstimacionCovarianza:
    """
    Fórmula universal evaluada con μ̂* y θ̂ de la calibración conjunta

    Raises:
        ErrorEstimacion: si la estimación no tiene registro de calibración conjunta
    """
    if not estimacion.calibracion or estimacion.calibracion.get("tipo") != "conjunta":
        raise ErrorEstimacion("vhat_jc necesita una estimación con calibración conjunta")
    V = _formula_universal(componentes_varianza(ensayo, estimacion))
    return EstimacionCovarianza(V, "jc")


class ResultadoContraste:
    """
    Estimación puntual y error estándar de un contraste

    Attributes:
        estimacion: f(θ̂)
        ee: error estándar por método delta
        z: estadístico contra el nulo (0, o 1 para la razón de riesgos)
        p: valor p bilateral normal
    """

    def __init__(self, estimacion: float, ee: float, z: float, p: float):
        self.estimacion = estimacion
        self.ee = ee
        self.z = z
        self.p = p

    def intervalo(self, nivel: float = 0.95) -> tuple:
        cuantil = norm.ppf(0.5 + nivel / 2.0)
        return self.estimacion - cuantil * self.ee, self.estimacion + cuantil * self.ee

    def to_dict(self) -> Dict:
        return {"estimacion": self.estimacion, "ee": self.ee, "z": self.z, "p": self.p}


def error_estandar_delta(covarianza: EstimacionCovarianza, estimacion: EstimacionTheta,
                         contraste: Contraste, n: int) -> ResultadoContraste:
    """
    EE = sqrt(∇fᵀ V̂ ∇f / n) con la diagonal negativa de V̂ recortada a 0

    Args:
        covarianza: V̂
        estimacion: θ̂
        contraste: f
        n: pacientes

    Raises:
        ErrorEstimacion: si la forma cuadrática no es positiva (V̂ no PSD a n finito)
    """
    V = covarianza.V.copy()
    np.fill_diagonal(V, np.maximum(np.diag(V), 0.0))
    gradiente = contraste.gradiente(estimacion.theta)
    forma = float(gradiente @ V @ gradiente)
    if not forma > 0:
        raise ErrorEstimacion(f"Forma cuadrática no positiva ({forma:.3g}): V̂ no PSD a n finito")
    valor = contraste.evaluar(estimacion.theta)
    ee = math.sqrt(forma / n)
    nulo = 1.0 if contraste.tipo == "razon_riesgo" else 0.0
    z = (valor - nulo) / ee
    return ResultadoContraste(valor, ee, z, float(2.0 * norm.sf(abs(z))))


def descomposicion_influencia(ensayo: EnsayoClinico, estimacion: EstimacionTheta) -> np.ndarray:
    """
    Función de influencia estimada de cada paciente

    φ̂ₐ,ᵢ = I(Aᵢ=a)/πₐ·(yᵢ − μ̂ₐ(Xᵢ) − θ̂ₐ + μ̄ₐ) + μ̂ₐ(Xᵢ) − μ̄ₐ

    Returns:
        matriz n×k
    """
    mu = estimacion.mu
    mu_barra = mu.mean(axis=0)
    indicador = (ensayo.brazo[:, None] == np.arange(ensayo.k)[None, :]) / ensayo.pi
    residuo = ensayo.respuesta[:, None] - mu - estimacion.theta + mu_barra
    return indicador * residuo + mu - mu_barra


def diagnostico_condiciones(ensayo: EnsayoClinico, estimacion: EstimacionTheta,
                            omega: Optional[EspecificacionOmega] = None) -> Dict:
    """
    Diagnósticos muestrales de las condiciones de aplicabilidad universal y ganancia garantizada

    Returns:
        diccionario con
        'brechas_estrato': matriz L×k, residuo medio de cada celda menos el residuo medio del brazo
             (NaN en celdas vacías);
        'ortogonalidad': matriz k×k, covarianza dentro del brazo a de (y − μ̂ₐ, μ̂_b);
        'ganancia': matriz k×k, diferencia entre ambos lados de la condición de
             ganancia garantizada bajo Ω conocida (None si Ω no se conoce)
    """
    k, L = ensayo.k, ensayo.num_estratos
    mu = estimacion.mu
    residuo = ensayo.respuesta[:, None] - mu

    brechas = np.full((L, k), np.nan)
    ortogonalidad = np.zeros((k, k))
    for a in range(k):
        en_brazo = ensayo.brazo == a
        r = residuo[en_brazo, a]
        if r.size >= 2:
            ortogonalidad[a] = (r - r.mean()) @ (mu[en_brazo] - mu[en_brazo].mean(axis=0)) / (r.size - 1)
        for z in range(L):
            celda = en_brazo & (ensayo.estratos == z)
            if np.any(celda):
                brechas[z, a] = residuo[celda, a].mean() - r.mean()

    ganancia = None
    if omega is not None and omega.es_conocida:
        lado_izquierdo = np.diag(np.diag(ortogonalidad) / ensayo.pi) - ortogonalidad
        try:
            c = componentes_varianza(ensayo, estimacion)
        except ErrorEstimacion:
            c = None
        if c is not None:
            lado_derecho = np.zeros((k, k))
            for z, peso in enumerate(c.pesos):
                lado_derecho += peso * np.diag(c.RY[z] - c.RX[z]) @ omega.diferencia(z) @ np.diag(c.RX[z])
            ganancia = lado_izquierdo - lado_derecho

    return {"brechas_estrato": brechas, "ortogonalidad": ortogonalidad, "ganancia": ganancia}
