"""
Esquemas de aleatorización secuencial: simple, bloques permutados estratificados y minimización de Pocock-Simon
"""
import logging
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

try:
    from .datos import EnsayoClinico, validar_pi
    from .errores import ErrorAleatorizacion, ErrorDatos
except ImportError:
    from datos import EnsayoClinico, validar_pi
    from errores import ErrorAleatorizacion, ErrorDatos

logger = logging.getLogger(__name__)

TIPOS_ESQUEMA = ("simple", "bloques_permutados", "pocock_simon")
TOLERANCIA_EMPATE = 1e-12


class EspecificacionEsquema:
    """
    Descripción inmutable de un esquema de aleatorización

    Attributes:
        tipo: 'simple', 'bloques_permutados' o 'pocock_simon'
        pi: proporciones objetivo de asignación
        tamano_bloque: largo de cada bloque (solo bloques permutados)
        p_moneda: probabilidad de asignar un brazo minimizador (solo Pocock-Simon)
        pesos_margenes: peso de cada factor en el desbalance (solo Pocock-Simon)
    """

    def __init__(self, tipo: str, pi: Sequence[float],
                 tamano_bloque: Optional[int] = None,
                 p_moneda: float = 0.8,
                 pesos_margenes: Optional[Sequence[float]] = None):
        if tipo not in TIPOS_ESQUEMA:
            raise ErrorAleatorizacion(f"Esquema de aleatorización no soportado: {tipo}")
        try:
            self.pi = validar_pi(pi)
        except ErrorDatos as e:
            raise ErrorAleatorizacion(str(e))
        self.tipo = tipo
        self.tamano_bloque = None
        self.p_moneda = float(p_moneda)
        self.pesos_margenes = None if pesos_margenes is None else np.asarray(pesos_margenes, dtype=float)

        if tipo == "bloques_permutados":
            if tamano_bloque is None or int(tamano_bloque) < 1:
                raise ErrorAleatorizacion("Los bloques permutados necesitan un tamaño de bloque positivo")
            self.tamano_bloque = int(tamano_bloque)
            self.composicion_bloque()
        if tipo == "pocock_simon":
            k = self.pi.size
            if not (1.0 / k < self.p_moneda <= 1.0):
                raise ErrorAleatorizacion(f"p_moneda debe estar en (1/{k}, 1]: {self.p_moneda}")
            if self.pesos_margenes is not None and np.any(self.pesos_margenes < 0):
                raise ErrorAleatorizacion("Los pesos de los márgenes no pueden ser negativos")

    @property
    def k(self) -> int:
        return int(self.pi.size)

    def composicion_bloque(self) -> np.ndarray:
        """
        Cantidad de lugares de cada brazo en un bloque completo

        Raises:
            ErrorAleatorizacion: si tamano_bloque·πₐ no es un entero positivo para algún brazo
        """
        lugares = self.tamano_bloque * self.pi
        redondeados = np.rint(lugares)
        if np.any(redondeados < 1) or np.any(np.abs(lugares - redondeados) > 1e-9):
            raise ErrorAleatorizacion(
                f"El tamaño de bloque {self.tamano_bloque} no es compatible con pi={self.pi.tolist()}")
        return redondeados.astype(int)

    def to_dict(self) -> Dict:
        data = {"tipo": self.tipo}
        if self.tipo == "bloques_permutados":
            data["tamano_bloque"] = self.tamano_bloque
        if self.tipo == "pocock_simon":
            data["p_moneda"] = self.p_moneda
            if self.pesos_margenes is not None:
                data["pesos_margenes"] = self.pesos_margenes.tolist()
        return data

    @classmethod
    def from_dict(cls, data: Dict, pi: Sequence[float]) -> 'EspecificacionEsquema':
        if "tipo" not in data:
            raise ErrorAleatorizacion("El esquema de aleatorización necesita el campo 'tipo'")
        return cls(data["tipo"], pi,
                   tamano_bloque=data.get("tamano_bloque"),
                   p_moneda=data.get("p_moneda", 0.8),
                   pesos_margenes=data.get("pesos_margenes"))

    def __str__(self) -> str:
        if self.tipo == "bloques_permutados":
            return f"bloques_permutados(tamano={self.tamano_bloque})"
        if self.tipo == "pocock_simon":
            return f"pocock_simon(p={self.p_moneda})"
        return "simple"


def omega_sr(pi: Sequence[float]) -> np.ndarray:
    """Covarianza multinomial de asignación bajo aleatorización simple: diag(π) − ππᵀ"""
    pi = np.asarray(pi, dtype=float)
    return np.diag(pi) - np.outer(pi, pi)


class EspecificacionOmega:
    """
    Matrices Ω(z) de un esquema; None significa que no se conocen

    Attributes:
        omega_sr: matriz de la aleatorización simple
        omega_estrato: matriz común a todos los estratos, o None si es desconocida
    """

    def __init__(self, pi: Sequence[float], omega_estrato: Optional[np.ndarray]):
        self.omega_sr = omega_sr(pi)
        self.omega_estrato = None if omega_estrato is None else np.asarray(omega_estrato, dtype=float)

    @property
    def es_conocida(self) -> bool:
        return self.omega_estrato is not None

    @property
    def es_simple(self) -> bool:
        """Ω(z) = Ω_SR en todos los estratos"""
        return self.es_conocida and np.array_equal(self.omega_estrato, self.omega_sr)

    def omega(self, estrato: int) -> np.ndarray:
        if not self.es_conocida:
            raise ErrorAleatorizacion("Ω(z) no es conocida para este esquema")
        return self.omega_estrato

    def diferencia(self, estrato: int) -> np.ndarray:
        """Ω_SR − Ω(z), la matriz de la corrección por aleatorización adaptativa"""
        return self.omega_sr - self.omega(estrato)

    def to_dict(self) -> Dict:
        return {
            "omega_sr": self.omega_sr.tolist(),
            "omega_estrato": None if self.omega_estrato is None else self.omega_estrato.tolist(),
        }


def omega_para(esquema: EspecificacionEsquema) -> EspecificacionOmega:
    """
    Ω(z) de cada esquema

    Args:
        esquema: especificación validada

    Returns:
        simple → Ω_SR; bloques permutados → 0; Pocock-Simon → desconocida
    """
    if esquema.tipo == "simple":
        return EspecificacionOmega(esquema.pi, omega_sr(esquema.pi))
    if esquema.tipo == "bloques_permutados":
        return EspecificacionOmega(esquema.pi, np.zeros((esquema.k, esquema.k)))
    return EspecificacionOmega(esquema.pi, None)


class EstadoEsquema:
    """
    Estado mutable de una corrida de asignación secuencial

    Un estado corresponde a un único flujo de pacientes; no debe compartirse entre hilos.
    """

    def __init__(self, esquema: EspecificacionEsquema, rng: np.random.Generator):
        self.esquema = esquema
        self.rng = rng
        self.bloques: Dict[int, List[int]] = {}
        self.conteos_estrato: Dict[int, np.ndarray] = {}
        self.conteos_margen: Dict[Tuple[int, object], np.ndarray] = {}
        self.asignados = 0

    def asignar_siguiente(self, estrato: int, margenes: Optional[Sequence] = None) -> int:
        """
        Asigna el brazo del siguiente paciente

        Args:
            estrato: nivel conjunto de estrato del paciente
            margenes: nivel del paciente en cada factor (obligatorio para Pocock-Simon)

        Returns:
            brazo asignado, 0-based

        Raises:
            ErrorAleatorizacion: si faltan los márgenes en Pocock-Simon o se viola la cota de bloque
        """
        tipo = self.esquema.tipo
        if tipo == "simple":
            brazo = int(self.rng.choice(self.esquema.k, p=self.esquema.pi))
        elif tipo == "bloques_permutados":
            brazo = self._siguiente_de_bloque(estrato)
        else:
            if margenes is None:
                raise ErrorAleatorizacion("Pocock-Simon necesita los niveles de cada margen del paciente")
            brazo = self._siguiente_minimizacion(list(margenes))

        conteo = self.conteos_estrato.setdefault(estrato, np.zeros(self.esquema.k, dtype=int))
        conteo[brazo] += 1
        if margenes is not None:
            for j, nivel in enumerate(margenes):
                self.conteos_margen.setdefault((j, nivel), np.zeros(self.esquema.k, dtype=int))[brazo] += 1
        if tipo == "bloques_permutados":
            self._verificar_cota(estrato)
        self.asignados += 1
        return brazo

    def asignar_secuencia(self, estratos: Sequence[int],
                          margenes: Optional[np.ndarray] = None) -> np.ndarray:
        """Asigna en orden a todos los pacientes de un flujo"""
        estratos = np.asarray(estratos, dtype=int)
        brazos = np.empty(estratos.size, dtype=int)
        for i, estrato in enumerate(estratos):
            fila = None if margenes is None else margenes[i].tolist()
            brazos[i] = self.asignar_siguiente(int(estrato), fila)
        return brazos

    def _siguiente_de_bloque(self, estrato: int) -> int:
        bloque = self.bloques.get(estrato)
        if not bloque:
            composicion = self.esquema.composicion_bloque()
            bloque = [a for a, lugares in enumerate(composicion) for _ in range(lugares)]
            self.bloques[estrato] = bloque
        return bloque.pop(int(self.rng.integers(len(bloque))))

    def _verificar_cota(self, estrato: int) -> None:
        conteo = self.conteos_estrato[estrato]
        desvio = np.abs(conteo - conteo.sum() * self.esquema.pi)
        if np.any(desvio > self.esquema.tamano_bloque + 1e-9):
            raise ErrorAleatorizacion(
                f"Estado de bloques corrupto en el estrato {estrato}: conteos {conteo.tolist()}")

    def _desbalances(self, margenes: List) -> np.ndarray:
        k = self.esquema.k
        pesos = self.esquema.pesos_margenes
        if pesos is None:
            pesos = np.ones(len(margenes))
        if pesos.size != len(margenes):
            raise ErrorAleatorizacion(
                f"Hay {pesos.size} pesos de márgenes y el paciente tiene {len(margenes)} márgenes")

        desbalance = np.zeros(k)
        for a in range(k):
            for j, nivel in enumerate(margenes):
                hipotetico = self.conteos_margen.get((j, nivel), np.zeros(k, dtype=int)).astype(float)
                hipotetico[a] += 1
                # conteos escalados por 1/πₐ para que el objetivo sea la igualdad
                escalado = hipotetico / self.esquema.pi
                desbalance[a] += pesos[j] * (escalado.max() - escalado.min())
        return desbalance

    def _siguiente_minimizacion(self, margenes: List) -> int:
        desbalance = self._desbalances(margenes)
        minimo = desbalance.min()
        minimizadores = np.flatnonzero(desbalance <= minimo + TOLERANCIA_EMPATE)
        resto = np.flatnonzero(desbalance > minimo + TOLERANCIA_EMPATE)
        if resto.size == 0:
            return int(self.rng.integers(self.esquema.k))
        if self.rng.random() < self.esquema.p_moneda:
            return int(minimizadores[self.rng.integers(minimizadores.size)])
        return int(resto[self.rng.integers(resto.size)])


def aleatorizar(esquema: EspecificacionEsquema, estratos: Sequence[int],
                margenes: Optional[np.ndarray], rng: np.random.Generator) -> np.ndarray:
    """
    Asigna un flujo completo de pacientes con un estado nuevo

    Args:
        esquema: esquema a usar
        estratos: nivel conjunto de cada paciente, en orden de llegada
        margenes: matriz n×m de niveles por factor (Pocock-Simon)
        rng: generador del flujo

    Returns:
        brazos asignados, 0-based
    """
    estado = EstadoEsquema(esquema, rng)
    brazos = estado.asignar_secuencia(estratos, margenes if esquema.tipo == "pocock_simon" else None)
    logger.debug("Asignados %d pacientes con %s", estado.asignados, esquema)
    return brazos


def verificar_tasa_asignacion(ensayo: EnsayoClinico, esquema: EspecificacionEsquema) -> np.ndarray:
    """
    Estadísticos √n·(nₐ(z)/n(z) − πₐ) por estrato y brazo

    Args:
        ensayo: ensayo generado con el esquema
        esquema: esquema usado

    Returns:
        matriz L×k de estadísticos

    Raises:
        ErrorAleatorizacion: si bajo bloques permutados |nₐ(z) − n(z)πₐ| supera el tamaño de bloque
    """
    conteos = np.zeros((ensayo.num_estratos, ensayo.k))
    np.add.at(conteos, (ensayo.estratos, ensayo.brazo), 1)
    n_estrato = conteos.sum(axis=1, keepdims=True)

    if esquema.tipo == "bloques_permutados":
        desvio = np.abs(conteos - n_estrato * esquema.pi)
        if np.any(desvio > esquema.tamano_bloque + 1e-9):
            estrato, brazo = np.unravel_index(np.argmax(desvio), desvio.shape)
            raise ErrorAleatorizacion(
                f"Cota de bloque violada en el estrato {estrato + 1}, brazo {brazo + 1}: "
                f"desvío {desvio[estrato, brazo]:g} > {esquema.tamano_bloque}")

    return np.sqrt(ensayo.n) * (conteos / n_estrato - esquema.pi)


def interpretar_pi(valores: Sequence) -> List[float]:
    """
    Convierte proporciones escritas como números o fracciones ('2/3')

    Raises:
        ErrorDatos: si algún valor no se puede interpretar
    """
    resultado = []
    for valor in valores:
        try:
            resultado.append(float(Fraction(str(valor))))
        except (ValueError, ZeroDivisionError):
            raise ErrorDatos(f"Proporción de asignación inválida: {valor!r}")
    if resultado and abs(sum(resultado) - 1.0) <= 1e-9:
        # la fracción decimal más cercana puede no sumar 1 exactamente
        resultado[-1] = 1.0 - sum(resultado[:-1])
    return resultado
