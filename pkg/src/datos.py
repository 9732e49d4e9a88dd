"""
Tipos de datos centrales: ensayo observado, resultados potenciales y contrastes
"""
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

try:
    from .errores import ErrorDatos, ErrorEstimacion
except ImportError:
    from errores import ErrorDatos, ErrorEstimacion


TOLERANCIA_PI = 1e-12


def _solo_lectura(arreglo: np.ndarray) -> np.ndarray:
    copia = np.array(arreglo, copy=True)
    copia.setflags(write=False)
    return copia


def validar_pi(pi: Sequence[float]) -> np.ndarray:
    """
    Valida un vector de proporciones de asignación

    Args:
        pi: proporciones objetivo por brazo

    Returns:
        vector numpy de solo lectura

    Raises:
        ErrorDatos: si alguna proporción no es positiva o no suman 1
    """
    pi = np.asarray(pi, dtype=float).reshape(-1)
    if pi.size < 1:
        raise ErrorDatos("El vector pi no puede estar vacío")
    if np.any(~np.isfinite(pi)) or np.any(pi <= 0):
        raise ErrorDatos(f"Todas las proporciones pi deben ser positivas: {pi.tolist()}")
    if abs(pi.sum() - 1.0) > TOLERANCIA_PI:
        raise ErrorDatos(f"Las proporciones pi deben sumar 1 (suman {pi.sum():.15g})")
    return _solo_lectura(pi)


def codificar_estratos(margenes: np.ndarray) -> Tuple[np.ndarray, np.ndarray, List[List[str]]]:
    """
    Cruza varias columnas de estratificación en un único nivel conjunto

    Solo las combinaciones observadas reciben índice; se numeran en orden
    lexicográfico de los niveles de cada margen.

    Args:
        margenes: matriz n×m con las etiquetas de cada factor de estratificación

    Returns:
        tupla (estratos 0..L-1, margenes codificados 0..m_j-1, etiquetas por margen)
    """
    margenes = np.asarray(margenes, dtype=object)
    if margenes.ndim == 1:
        margenes = margenes.reshape(-1, 1)
    n, m = margenes.shape

    if m == 0:
        return np.zeros(n, dtype=int), np.zeros((n, 0), dtype=int), []

    codigos = np.zeros((n, m), dtype=int)
    etiquetas = []
    for j in range(m):
        columna = np.array([str(valor) for valor in margenes[:, j]])
        niveles, inversa = np.unique(columna, return_inverse=True)
        codigos[:, j] = inversa.reshape(-1)
        etiquetas.append([str(nivel) for nivel in niveles])

    _, estratos = np.unique(codigos, axis=0, return_inverse=True)
    return estratos.reshape(-1).astype(int), codigos, etiquetas


class EnsayoClinico:
    """
    Datos observados de un ensayo aleatorizado

    Los índices de brazo y estrato son 0-based dentro de los arreglos; las
    superficies de usuario (CSV, contrastes, reportes) numeran los brazos desde 1.

    Attributes:
        brazo: brazo asignado a cada paciente (0..k-1)
        estratos: nivel conjunto de estrato de cada paciente (0..L-1)
        covariables: matriz n×d de covariables numéricas
        respuesta: respuesta observada y_{A_i,i}
        pi: proporciones objetivo de asignación
        nombres_covariables: nombre de cada columna de covariables
        margenes: matriz n×m con el nivel de cada factor de estratificación
        nombres_margenes: nombre de cada factor de estratificación
        niveles_margenes: etiquetas originales de los niveles de cada factor
    """

    def __init__(self,
                 brazo: Sequence[int],
                 estratos: Sequence[int],
                 covariables: np.ndarray,
                 respuesta: Sequence[float],
                 pi: Sequence[float],
                 nombres_covariables: Optional[List[str]] = None,
                 margenes: Optional[np.ndarray] = None,
                 nombres_margenes: Optional[List[str]] = None,
                 niveles_margenes: Optional[List[List[str]]] = None):
        """
        Construye y valida un ensayo

        Raises:
            ErrorDatos: si alguna dimensión o invariante no se cumple
        """
        self.pi = validar_pi(pi)
        brazo = np.asarray(brazo)
        respuesta = np.asarray(respuesta, dtype=float).reshape(-1)
        n = respuesta.size
        if n == 0:
            raise ErrorDatos("El ensayo no tiene pacientes")

        if brazo.shape != (n,) or not np.all(np.equal(np.mod(brazo, 1), 0)):
            raise ErrorDatos("El vector de brazos debe tener un entero por paciente")
        brazo = brazo.astype(int)
        if brazo.min() < 0 or brazo.max() >= self.pi.size:
            raise ErrorDatos(f"Hay brazos fuera del rango 1..{self.pi.size}")

        estratos = np.asarray(estratos).astype(int).reshape(-1)
        if estratos.shape != (n,):
            raise ErrorDatos("El vector de estratos debe tener un valor por paciente")
        niveles = np.unique(estratos)
        if niveles[0] != 0 or not np.array_equal(niveles, np.arange(niveles.size)):
            raise ErrorDatos("Los niveles de estrato deben ser 0..L-1 y estar todos presentes")

        covariables = np.asarray(covariables, dtype=float)
        if covariables.ndim == 1:
            covariables = covariables.reshape(-1, 1)
        if covariables.size == 0:
            covariables = np.zeros((n, 0))
        if covariables.shape[0] != n:
            raise ErrorDatos("La matriz de covariables no coincide con el número de pacientes")
        if not np.all(np.isfinite(covariables)) or not np.all(np.isfinite(respuesta)):
            raise ErrorDatos("Hay valores faltantes o no finitos en covariables o respuesta")

        d = covariables.shape[1]
        if nombres_covariables is None:
            nombres_covariables = [f"x{j + 1}" for j in range(d)]
        if len(nombres_covariables) != d:
            raise ErrorDatos("La cantidad de nombres de covariables no coincide con las columnas")

        if margenes is None:
            margenes = estratos.reshape(-1, 1)
        margenes = np.asarray(margenes).astype(int)
        if margenes.ndim == 1:
            margenes = margenes.reshape(-1, 1)
        if margenes.shape[0] != n:
            raise ErrorDatos("La matriz de márgenes no coincide con el número de pacientes")
        m = margenes.shape[1]
        if nombres_margenes is None:
            nombres_margenes = [f"z{j + 1}" for j in range(m)]
        if niveles_margenes is None:
            niveles_margenes = [[str(nivel) for nivel in range(int(margenes[:, j].max()) + 1)]
                                for j in range(m)]

        self.brazo = _solo_lectura(brazo)
        self.estratos = _solo_lectura(estratos)
        self.covariables = _solo_lectura(covariables)
        self.respuesta = _solo_lectura(respuesta)
        self.margenes = _solo_lectura(margenes)
        self.nombres_covariables = list(nombres_covariables)
        self.nombres_margenes = list(nombres_margenes)
        self.niveles_margenes = [list(niveles) for niveles in niveles_margenes]

    @property
    def n(self) -> int:
        return int(self.respuesta.size)

    @property
    def k(self) -> int:
        return int(self.pi.size)

    @property
    def d(self) -> int:
        return int(self.covariables.shape[1])

    @property
    def num_estratos(self) -> int:
        return int(self.estratos.max()) + 1

    @property
    def n_por_brazo(self) -> np.ndarray:
        return np.bincount(self.brazo, minlength=self.k)

    def indicadores_estrato(self, estratos: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Matriz de indicadores de estrato sin el primer nivel (lo absorbe el intercepto)

        Args:
            estratos: niveles a codificar; por defecto los del propio ensayo

        Returns:
            matriz n×(L-1) de ceros y unos
        """
        if estratos is None:
            estratos = self.estratos
        estratos = np.asarray(estratos, dtype=int)
        L = self.num_estratos
        indicadores = np.zeros((estratos.size, max(L - 1, 0)))
        for nivel in range(1, L):
            indicadores[:, nivel - 1] = (estratos == nivel)
        return indicadores

    def etiqueta_estrato(self, nivel: int) -> str:
        """Etiqueta legible de un nivel conjunto (p. ej. 'sexo=F|region=2')"""
        fila = np.flatnonzero(self.estratos == nivel)[0]
        partes = []
        for j, nombre in enumerate(self.nombres_margenes):
            partes.append(f"{nombre}={self.niveles_margenes[j][self.margenes[fila, j]]}")
        return "|".join(partes)

    def verificar_brazos_no_vacios(self) -> None:
        """
        Raises:
            ErrorEstimacion: si algún brazo no tiene pacientes
        """
        vacios = [a + 1 for a, conteo in enumerate(self.n_por_brazo) if conteo == 0]
        if vacios:
            raise ErrorEstimacion(f"Brazos sin pacientes: {vacios}")

    def medias_por_brazo(self) -> np.ndarray:
        """Media muestral de la respuesta en cada brazo"""
        self.verificar_brazos_no_vacios()
        return np.array([self.respuesta[self.brazo == a].mean() for a in range(self.k)])

    def con_respuesta(self, respuesta: Sequence[float]) -> 'EnsayoClinico':
        """Copia del ensayo con otra respuesta observada"""
        return EnsayoClinico(self.brazo, self.estratos, self.covariables, respuesta, self.pi,
                             self.nombres_covariables, self.margenes,
                             self.nombres_margenes, self.niveles_margenes)

    def reordenar(self, permutacion: Sequence[int]) -> 'EnsayoClinico':
        """Copia del ensayo con los pacientes en otro orden"""
        p = np.asarray(permutacion, dtype=int)
        return EnsayoClinico(self.brazo[p], self.estratos[p], self.covariables[p],
                             self.respuesta[p], self.pi, self.nombres_covariables,
                             self.margenes[p], self.nombres_margenes, self.niveles_margenes)

    def to_dict(self) -> Dict:
        """Resumen serializable del ensayo (sin los datos por paciente)"""
        return {
            "n": self.n,
            "k": self.k,
            "num_estratos": self.num_estratos,
            "pi": self.pi.tolist(),
            "n_por_brazo": self.n_por_brazo.tolist(),
            "covariables": self.nombres_covariables,
            "margenes": self.nombres_margenes,
        }

    def __str__(self) -> str:
        return f"EnsayoClinico(n={self.n}, k={self.k}, L={self.num_estratos}, d={self.d})"

    def __repr__(self) -> str:
        return (f"EnsayoClinico(n={self.n}, pi={self.pi.tolist()}, "
                f"covariables={self.nombres_covariables}, margenes={self.nombres_margenes})")


class ResultadosPotenciales:
    """
    Respuestas potenciales de todos los brazos (solo en simulación)

    Attributes:
        covariables: matriz n×d
        potenciales: matriz n×k con (y_1,...,y_k) de cada paciente
        pi: proporciones objetivo
        margenes: matriz n×m con los factores de estratificación codificados
        medias_verdaderas: matriz n×k con E(y_a | X_i), si se conoce
    """

    def __init__(self,
                 covariables: np.ndarray,
                 potenciales: np.ndarray,
                 pi: Sequence[float],
                 margenes: np.ndarray,
                 nombres_covariables: Optional[List[str]] = None,
                 nombres_margenes: Optional[List[str]] = None,
                 medias_verdaderas: Optional[np.ndarray] = None):
        self.pi = validar_pi(pi)
        potenciales = np.asarray(potenciales, dtype=float)
        if potenciales.ndim != 2 or potenciales.shape[1] != self.pi.size:
            raise ErrorDatos("La matriz de resultados potenciales debe ser n×k")
        self.potenciales = _solo_lectura(potenciales)
        self.covariables = _solo_lectura(np.asarray(covariables, dtype=float))
        estratos, codigos, etiquetas = codificar_estratos(margenes)
        self.estratos = _solo_lectura(estratos)
        self.margenes = _solo_lectura(codigos)
        self.niveles_margenes = etiquetas
        self.nombres_covariables = nombres_covariables
        self.nombres_margenes = nombres_margenes
        self.medias_verdaderas = (None if medias_verdaderas is None
                                  else _solo_lectura(np.asarray(medias_verdaderas, dtype=float)))

    @property
    def n(self) -> int:
        return int(self.potenciales.shape[0])

    def observar(self, brazo: Sequence[int]) -> EnsayoClinico:
        """
        Revela la respuesta del brazo asignado a cada paciente

        Args:
            brazo: asignaciones 0-based

        Returns:
            ensayo observado con y_{A_i,i} = potenciales[i, A_i]
        """
        brazo = np.asarray(brazo, dtype=int)
        respuesta = self.potenciales[np.arange(self.n), brazo]
        return EnsayoClinico(brazo, self.estratos, self.covariables, respuesta, self.pi,
                             self.nombres_covariables, self.margenes,
                             self.nombres_margenes, self.niveles_margenes)


class Contraste:
    """
    Función de theta que se quiere estimar

    Los brazos se numeran desde 1, igual que en los archivos de entrada.

    Attributes:
        tipo: 'diferencia', 'lineal', 'razon_riesgo' o 'log_razon'
        a: brazo de referencia (denominador en las razones)
        b: brazo comparado
        c: vector de coeficientes (solo 'lineal')
    """

    TIPOS = ("diferencia", "lineal", "razon_riesgo", "log_razon")

    def __init__(self, tipo: str, a: Optional[int] = None, b: Optional[int] = None,
                 c: Optional[Sequence[float]] = None):
        if tipo not in self.TIPOS:
            raise ErrorDatos(f"Tipo de contraste no soportado: {tipo}")
        if tipo == "lineal":
            if c is None or len(c) == 0:
                raise ErrorDatos("El contraste lineal necesita el vector c")
        elif a is None or b is None or int(a) < 1 or int(b) < 1 or int(a) == int(b):
            raise ErrorDatos(f"El contraste '{tipo}' necesita dos brazos distintos numerados desde 1")
        self.tipo = tipo
        self.a = None if a is None else int(a)
        self.b = None if b is None else int(b)
        self.c = None if c is None else np.asarray(c, dtype=float)

    @classmethod
    def diferencia(cls, a: int, b: int) -> 'Contraste':
        return cls("diferencia", a=a, b=b)

    @classmethod
    def lineal(cls, c: Sequence[float]) -> 'Contraste':
        return cls("lineal", c=c)

    @classmethod
    def razon_riesgo(cls, a: int, b: int) -> 'Contraste':
        return cls("razon_riesgo", a=a, b=b)

    @classmethod
    def log_razon(cls, a: int, b: int) -> 'Contraste':
        return cls("log_razon", a=a, b=b)

    def coeficientes(self, k: int) -> np.ndarray:
        """Vector c equivalente para contrastes lineales"""
        self.validar(k)
        if self.tipo == "lineal":
            return self.c.copy()
        if self.tipo != "diferencia":
            raise ErrorDatos(f"El contraste '{self.tipo}' no es lineal")
        c = np.zeros(k)
        c[self.b - 1] = 1.0
        c[self.a - 1] = -1.0
        return c

    def validar(self, k: int) -> None:
        """
        Raises:
            ErrorDatos: si el contraste no es compatible con k brazos
        """
        if self.tipo == "lineal":
            if self.c.size != k:
                raise ErrorDatos(f"El vector c tiene largo {self.c.size} y hay {k} brazos")
        elif max(self.a, self.b) > k:
            raise ErrorDatos(f"El contraste usa el brazo {max(self.a, self.b)} pero hay {k} brazos")

    def _razon(self, theta: np.ndarray) -> float:
        denominador = theta[self.a - 1]
        if denominador <= 0:
            raise ErrorEstimacion(f"Denominador no positivo en la razón: theta_{self.a} = {denominador}")
        razon = theta[self.b - 1] / denominador
        if self.tipo == "log_razon" and razon <= 0:
            raise ErrorEstimacion(f"La razón {razon} no es positiva; no existe su logaritmo")
        return razon

    def evaluar(self, theta: Sequence[float]) -> float:
        """
        Evalúa f(theta)

        Raises:
            ErrorEstimacion: si una razón tiene denominador no positivo
        """
        theta = np.asarray(theta, dtype=float)
        if self.tipo in ("diferencia", "lineal"):
            return float(self.coeficientes(theta.size) @ theta)
        self.validar(theta.size)
        razon = self._razon(theta)
        return float(razon if self.tipo == "razon_riesgo" else np.log(razon))

    def gradiente(self, theta: Sequence[float]) -> np.ndarray:
        """Gradiente de f evaluado en theta (para el método delta)"""
        theta = np.asarray(theta, dtype=float)
        if self.tipo in ("diferencia", "lineal"):
            return self.coeficientes(theta.size)
        self.validar(theta.size)
        self._razon(theta)
        a, b = self.a - 1, self.b - 1
        gradiente = np.zeros(theta.size)
        if self.tipo == "razon_riesgo":
            gradiente[a] = -theta[b] / theta[a] ** 2
            gradiente[b] = 1.0 / theta[a]
        else:
            gradiente[a] = -1.0 / theta[a]
            gradiente[b] = 1.0 / theta[b]
        return gradiente

    def to_dict(self) -> Dict:
        if self.tipo == "lineal":
            return {"tipo": self.tipo, "c": self.c.tolist()}
        return {"tipo": self.tipo, "a": self.a, "b": self.b}

    @classmethod
    def from_dict(cls, data: Dict) -> 'Contraste':
        if "tipo" not in data:
            raise ErrorDatos("El contraste necesita el campo 'tipo'")
        return cls(data["tipo"], a=data.get("a"), b=data.get("b"), c=data.get("c"))

    def __str__(self) -> str:
        if self.tipo == "lineal":
            return f"lineal(c={self.c.tolist()})"
        simbolos = {"diferencia": f"theta{self.b} - theta{self.a}",
                    "razon_riesgo": f"theta{self.b} / theta{self.a}",
                    "log_razon": f"log(theta{self.b} / theta{self.a})"}
        return simbolos[self.tipo]

    def __repr__(self) -> str:
        return f"Contraste({self.to_dict()})"


def resumir_estratos(ensayo: EnsayoClinico) -> pd.DataFrame:
    """
    Tabla de conteos por estrato y brazo

    Args:
        ensayo: ensayo a resumir

    Returns:
        DataFrame con columnas estrato, etiqueta, n, n_1, ..., n_k
    """
    conteos = np.zeros((ensayo.num_estratos, ensayo.k), dtype=int)
    np.add.at(conteos, (ensayo.estratos, ensayo.brazo), 1)
    tabla = pd.DataFrame({
        "estrato": np.arange(1, ensayo.num_estratos + 1),
        "etiqueta": [ensayo.etiqueta_estrato(nivel) for nivel in range(ensayo.num_estratos)],
        "n": conteos.sum(axis=1),
    })
    for a in range(ensayo.k):
        tabla[f"n_{a + 1}"] = conteos[:, a]
    return tabla
