"""
Procesos generadores de datos y arnés de Monte Carlo para comparar estimadores
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import integrate, optimize
from scipy.special import expit
from scipy.stats import norm

try:
    from .aleatorizacion import EspecificacionEsquema, aleatorizar, omega_para
    from .datos import Contraste, ResultadosPotenciales
    from .errores import ErrorAjusteCovariables, ErrorConfiguracion
    from .modelos_trabajo import EspecificacionModelo
    from .tuberia import EspecificacionTuberia, ejecutar_tuberia
except ImportError:
    from aleatorizacion import EspecificacionEsquema, aleatorizar, omega_para
    from datos import Contraste, ResultadosPotenciales
    from errores import ErrorAjusteCovariables, ErrorConfiguracion
    from modelos_trabajo import EspecificacionModelo
    from tuberia import EspecificacionTuberia, ejecutar_tuberia

logger = logging.getLogger(__name__)

EPSILON_FIGURA1 = 1e-3
MEDIANAS = ("muestral", "poblacional")
NIVEL_CONFIANZA = 0.95


class ProcesoGenerador:
    """
    Proceso generador de resultados potenciales

    Attributes:
        nombre: identificador del proceso
        pi: proporciones de asignación del escenario
        nombres_covariables: columnas de X
        nombres_margenes: factores de estratificación
    """

    nombre = "base"
    pi: List[float] = []
    nombres_covariables: List[str] = []
    nombres_margenes: List[str] = []

    def covariables(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def medias(self, X: np.ndarray) -> np.ndarray:
        """E(yₐ | X) para cada fila, matriz n×k"""
        raise NotImplementedError

    def respuestas(self, medias: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return (rng.random(medias.shape) < medias).astype(float)

    def margenes(self, X: np.ndarray, mediana: str) -> np.ndarray:
        raise NotImplementedError

    def valor_verdadero(self) -> np.ndarray:
        """θ = E(Y) exacto (o de Monte Carlo con semilla fija)"""
        raise NotImplementedError

    def generar(self, n: int, rng: np.random.Generator, mediana: str = "muestral") -> ResultadosPotenciales:
        """
        Sortea n pacientes con todas sus respuestas potenciales

        Args:
            n: pacientes
            rng: generador
            mediana: 'muestral' o 'poblacional' para dicotomizar covariables continuas
        """
        if n < 1:
            raise ErrorConfiguracion("El proceso generador necesita n ≥ 1")
        if mediana not in MEDIANAS:
            raise ErrorConfiguracion(f"Mediana desconocida: {mediana}")
        X = self.covariables(n, rng)
        medias = self.medias(X)
        potenciales = self.respuestas(medias, rng)
        return ResultadosPotenciales(X, potenciales, self.pi, self.margenes(X, mediana),
                                     nombres_covariables=list(self.nombres_covariables),
                                     nombres_margenes=list(self.nombres_margenes),
                                     medias_verdaderas=medias)

    def to_dict(self) -> Dict:
        return {"tipo": self.nombre}


def _dicotomizar(x: np.ndarray, mediana: str, poblacional: float) -> np.ndarray:
    corte = np.median(x) if mediana == "muestral" else poblacional
    return (x > corte).astype(int)


def _media_uniforme(funcion, bajo: float = -5.0, alto: float = 5.0, puntos=None) -> float:
    valor, _ = integrate.quad(funcion, bajo, alto, points=puntos, limit=200,
                              epsabs=1e-13, epsrel=1e-12)
    return valor / (alto - bajo)


class Caso1(ProcesoGenerador):
    """Dos covariables, respuesta binaria, π = (1/2, 1/2); Z = (X_b, X_c dicotomizada)"""

    nombre = "caso1"
    pi = [0.5, 0.5]
    nombres_covariables = ["xc", "xb"]
    nombres_margenes = ["xb", "xc_mediana"]

    def covariables(self, n, rng):
        return np.column_stack([rng.uniform(-5.0, 5.0, n), rng.binomial(1, 0.5, n).astype(float)])

    def medias(self, X):
        xc, xb = X[:, 0], X[:, 1]
        return np.column_stack([expit(0.5 + 0.5 * xc + 0.5 * xb - 0.2 * xc ** 2),
                                expit(0.2 + 0.5 * xc + 0.5 * xb)])

    def margenes(self, X, mediana):
        return np.column_stack([X[:, 1].astype(int), _dicotomizar(X[:, 0], mediana, 0.0)])

    def valor_verdadero(self):
        theta = np.zeros(2)
        for xb in (0.0, 1.0):
            for a in range(2):
                theta[a] += 0.5 * _media_uniforme(
                    lambda x: self.medias(np.array([[x, xb]]))[0, a])
        return theta


class Caso2(ProcesoGenerador):
    """Cuatro covariables con interacciones, π = (2/3, 1/3); Z = tres continuas dicotomizadas"""

    nombre = "caso2"
    pi = [2.0 / 3.0, 1.0 / 3.0]
    nombres_covariables = ["xc1", "xc2", "xc3", "xb"]
    nombres_margenes = ["xc1_mediana", "xc2_mediana", "xc3_mediana"]

    def covariables(self, n, rng):
        return np.column_stack([rng.uniform(-5.0, 5.0, (n, 3)), rng.binomial(1, 0.5, n).astype(float)])

    @staticmethod
    def _logit1(x1, x2, x3, xb):
        return (0.2 - 0.5 * x1 + 0.5 * x2 + x3 + 0.2 * xb + x1 * (x2 + x3)
                - 0.2 * x1 ** 2 * xb - 0.02 * x1 ** 2 * (1.0 - xb))

    def medias(self, X):
        x1, x2, x3, xb = X[:, 0], X[:, 1], X[:, 2], X[:, 3]
        return np.column_stack([expit(self._logit1(x1, x2, x3, xb)),
                                1.0 - 0.02 * x1 ** 2 - 0.02 * x2 ** 2])

    def margenes(self, X, mediana):
        return np.column_stack([_dicotomizar(X[:, j], mediana, 0.0) for j in range(3)])

    def valor_verdadero(self, nodos: int = 400):
        # el logit es lineal en x3: la integral en x3 es exacta vía softplus
        t, w = np.polynomial.legendre.leggauss(nodos)
        x = 5.0 * t
        pesos = w / 2.0
        x1, x2 = np.meshgrid(x, x, indexing="ij")
        p12 = np.outer(pesos, pesos)
        theta1 = 0.0
        for xb in (0.0, 1.0):
            base = self._logit1(x1, x2, 0.0, xb)
            pendiente = 1.0 + x1
            with np.errstate(divide="ignore", invalid="ignore"):
                integral = (np.logaddexp(0.0, base + 5.0 * pendiente)
                            - np.logaddexp(0.0, base - 5.0 * pendiente)) / (10.0 * pendiente)
            integral = np.where(np.abs(pendiente) < 1e-8, expit(base), integral)
            theta1 += 0.5 * np.sum(p12 * integral)
        theta2 = 1.0 - 0.04 * 25.0 / 3.0
        return np.array([theta1, theta2])


class Figura1(ProcesoGenerador):
    """
    Respuestas de Poisson con medias no lineales, π = (1/3, 2/3)

    Las medias se recortan por debajo en ε = 1e-3 donde el logaritmo no está
    definido o no es positivo.
    """

    nombre = "figura1"
    pi = [1.0 / 3.0, 2.0 / 3.0]
    nombres_covariables = ["xc", "xb"]
    nombres_margenes = ["xb"]

    def covariables(self, n, rng):
        return np.column_stack([rng.uniform(-5.0, 5.0, n), rng.binomial(1, 0.5, n).astype(float)])

    @staticmethod
    def media1(xc, xb):
        argumento = 1.0 + xc + 6.0 * xc ** 3 + xb
        with np.errstate(divide="ignore", invalid="ignore"):
            valor = np.log(np.where(argumento > math.exp(EPSILON_FIGURA1), argumento, 1.0))
        return np.where(argumento > math.exp(EPSILON_FIGURA1), valor, EPSILON_FIGURA1)

    @staticmethod
    def media2(xc, xb):
        return np.maximum(xc + 10.0 * xc ** 2 + xb, EPSILON_FIGURA1)

    def medias(self, X):
        return np.column_stack([self.media1(X[:, 0], X[:, 1]), self.media2(X[:, 0], X[:, 1])])

    def respuestas(self, medias, rng):
        return rng.poisson(medias).astype(float)

    def margenes(self, X, mediana):
        return X[:, [1]].astype(int)

    def valor_verdadero(self):
        theta = np.zeros(2)
        for xb in (0.0, 1.0):
            corte1 = optimize.brentq(lambda x: 1.0 + x + 6.0 * x ** 3 + xb - math.exp(EPSILON_FIGURA1),
                                     -5.0, 5.0, xtol=1e-14)
            raices = np.roots([10.0, 1.0, xb - EPSILON_FIGURA1])
            cortes2 = sorted(float(r.real) for r in raices if abs(r.imag) < 1e-14 and -5 < r.real < 5)
            theta[0] += 0.5 * _media_uniforme(lambda x: float(self.media1(x, xb)), puntos=[corte1])
            theta[1] += 0.5 * _media_uniforme(lambda x: float(self.media2(x, xb)), puntos=cortes2 or None)
        return theta


DISTRIBUCIONES = ("uniforme", "bernoulli", "normal")
ENLACES = {"logit": expit, "log": np.exp, "identidad": lambda eta: eta}
RESPUESTAS = ("bernoulli", "poisson", "normal")


class ProcesoPersonalizado(ProcesoGenerador):
    """
    Proceso definido en la configuración

    Covariables independientes uniformes, Bernoulli o normales; para cada brazo
    un predictor lineal con términos 'x', 'x*z' o 'x^2', un enlace y una
    distribución de respuesta. Los estratos son covariables binarias o
    continuas dicotomizadas en la mediana.
    """

    nombre = "personalizado"

    def __init__(self, data: Dict):
        self.data = data
        covariables = data.get("covariables")
        if not covariables:
            raise ErrorConfiguracion("El proceso personalizado necesita 'covariables'")
        self.distribuciones = []
        for j, columna in enumerate(covariables):
            distribucion = columna.get("distribucion")
            if distribucion not in DISTRIBUCIONES:
                raise ErrorConfiguracion(f"Distribución desconocida: {distribucion}")
            parametros = list(columna.get("parametros", {"uniforme": [-1, 1], "bernoulli": [0.5],
                                                         "normal": [0, 1]}[distribucion]))
            self.distribuciones.append((distribucion, parametros))
        self.nombres_covariables = [c.get("nombre", f"x{j + 1}") for j, c in enumerate(covariables)]

        brazos = data.get("brazos")
        if not brazos:
            raise ErrorConfiguracion("El proceso personalizado necesita 'brazos'")
        self.brazos = []
        for brazo in brazos:
            enlace = brazo.get("enlace", "identidad")
            respuesta = brazo.get("respuesta", "normal")
            if enlace not in ENLACES or respuesta not in RESPUESTAS:
                raise ErrorConfiguracion(f"Enlace o respuesta desconocidos: {enlace}, {respuesta}")
            terminos = brazo.get("terminos", {})
            for termino in terminos:
                self._columnas_termino(termino)
            self.brazos.append((terminos, enlace, respuesta))
        self.sd_ruido = float(data.get("sd_ruido", 1.0))

        self.nombres_margenes = list(data.get("estratos", []))
        for nombre in self.nombres_margenes:
            if nombre not in self.nombres_covariables:
                raise ErrorConfiguracion(f"Estrato sobre una covariable desconocida: {nombre}")
        pi = data.get("pi", [1.0 / len(brazos)] * len(brazos))
        if len(pi) != len(brazos):
            raise ErrorConfiguracion("El largo de 'pi' no coincide con la cantidad de brazos")
        self.pi = [float(p) for p in pi]

    def _columnas_termino(self, termino: str) -> List[int]:
        if termino == "1":
            return []
        if "^" in termino:
            nombre, potencia = termino.split("^")
            return [self._indice(nombre)] * int(potencia)
        return [self._indice(nombre) for nombre in termino.split("*")]

    def _indice(self, nombre: str) -> int:
        nombre = nombre.strip()
        if nombre not in self.nombres_covariables:
            raise ErrorConfiguracion(f"Término sobre una covariable desconocida: {nombre}")
        return self.nombres_covariables.index(nombre)

    def covariables(self, n, rng):
        columnas = []
        for distribucion, parametros in self.distribuciones:
            if distribucion == "uniforme":
                columnas.append(rng.uniform(parametros[0], parametros[1], n))
            elif distribucion == "bernoulli":
                columnas.append(rng.binomial(1, parametros[0], n).astype(float))
            else:
                columnas.append(rng.normal(parametros[0], parametros[1], n))
        return np.column_stack(columnas)

    def medias(self, X):
        medias = []
        for terminos, enlace, _ in self.brazos:
            eta = np.zeros(X.shape[0])
            for termino, coeficiente in terminos.items():
                eta = eta + float(coeficiente) * np.prod(X[:, self._columnas_termino(termino)], axis=1)
            medias.append(ENLACES[enlace](eta))
        return np.column_stack(medias)

    def respuestas(self, medias, rng):
        columnas = []
        for a, (_, _, respuesta) in enumerate(self.brazos):
            m = medias[:, a]
            if respuesta == "bernoulli":
                columnas.append((rng.random(m.size) < m).astype(float))
            elif respuesta == "poisson":
                columnas.append(rng.poisson(np.maximum(m, 0.0)).astype(float))
            else:
                columnas.append(m + self.sd_ruido * rng.standard_normal(m.size))
        return np.column_stack(columnas)

    def margenes(self, X, mediana):
        columnas = []
        for nombre in self.nombres_margenes:
            j = self.nombres_covariables.index(nombre)
            distribucion, parametros = self.distribuciones[j]
            if distribucion == "bernoulli":
                columnas.append(X[:, j].astype(int))
            else:
                centro = (parametros[0] + parametros[1]) / 2.0 if distribucion == "uniforme" else parametros[0]
                columnas.append(_dicotomizar(X[:, j], mediana, centro))
        if not columnas:
            return np.zeros((X.shape[0], 1), dtype=int)
        return np.column_stack(columnas)

    def valor_verdadero(self, sorteos: int = 1_000_000):
        rng = np.random.default_rng(np.random.SeedSequence(0))
        return self.medias(self.covariables(sorteos, rng)).mean(axis=0)

    def to_dict(self):
        return dict(self.data, tipo=self.nombre)


PROCESOS = {"caso1": Caso1, "caso2": Caso2, "figura1": Figura1}


def crear_proceso(data) -> ProcesoGenerador:
    """Proceso a partir de su nombre o de un diccionario {'tipo': 'personalizado', ...}"""
    if isinstance(data, str):
        if data not in PROCESOS:
            raise ErrorConfiguracion(f"Proceso generador desconocido: {data}")
        return PROCESOS[data]()
    if isinstance(data, dict) and data.get("tipo") == "personalizado":
        return ProcesoPersonalizado(data)
    if isinstance(data, dict) and data.get("tipo") in PROCESOS:
        return PROCESOS[data["tipo"]]()
    raise ErrorConfiguracion(f"Proceso generador inválido: {data!r}")


def valores_verdaderos(proceso) -> np.ndarray:
    """θ verdadero de un proceso (objeto, nombre o diccionario de configuración)"""
    if not isinstance(proceso, ProcesoGenerador):
        proceso = crear_proceso(proceso)
    return np.asarray(proceso.valor_verdadero(), dtype=float)


def dgp_caso1(n: int, rng: np.random.Generator, mediana: str = "muestral") -> ResultadosPotenciales:
    return Caso1().generar(n, rng, mediana)


def dgp_caso2(n: int, rng: np.random.Generator, mediana: str = "muestral") -> ResultadosPotenciales:
    return Caso2().generar(n, rng, mediana)


def dgp_figura1(n: int, rng: np.random.Generator) -> ResultadosPotenciales:
    return Figura1().generar(n, rng)


def dgp_personalizado(data: Dict, n: int, rng: np.random.Generator,
                      mediana: str = "muestral") -> ResultadosPotenciales:
    return ProcesoPersonalizado(data).generar(n, rng, mediana)


class EspecificacionEscenario:
    """
    Escenario de Monte Carlo

    Attributes:
        proceso: proceso generador
        n: pacientes por réplica
        replicas: cantidad de réplicas
        esquema: esquema de aleatorización
        tuberias: estimadores a comparar
        semilla: semilla maestra
        contraste: función de θ a estimar
        mediana: 'muestral' o 'poblacional'
    """

    def __init__(self, proceso: ProcesoGenerador, n: int, replicas: int,
                 esquema: EspecificacionEsquema, tuberias: List[EspecificacionTuberia],
                 semilla: int, contraste: Contraste, mediana: str = "muestral"):
        if int(replicas) < 1:
            raise ErrorConfiguracion("El escenario necesita al menos 1 réplica")
        if int(n) < 20:
            raise ErrorConfiguracion("El escenario necesita n ≥ 20")
        if not tuberias:
            raise ErrorConfiguracion("El escenario necesita al menos una tubería")
        if mediana not in MEDIANAS:
            raise ErrorConfiguracion(f"Mediana desconocida: {mediana}")
        if not np.allclose(esquema.pi, proceso.pi, atol=1e-12):
            raise ErrorConfiguracion(f"El esquema usa pi={esquema.pi.tolist()} y el proceso pi={proceso.pi}")
        nombres = [t.nombre for t in tuberias]
        if len(set(nombres)) != len(nombres):
            raise ErrorConfiguracion(f"Nombres de tubería repetidos: {nombres}")
        contraste.validar(len(proceso.pi))
        self.proceso = proceso
        self.n = int(n)
        self.replicas = int(replicas)
        self.esquema = esquema
        self.tuberias = list(tuberias)
        self.semilla = int(semilla)
        self.contraste = contraste
        self.mediana = mediana

    def to_dict(self) -> Dict:
        return {
            "proceso": self.proceso.to_dict(),
            "n": self.n,
            "replicas": self.replicas,
            "esquema": self.esquema.to_dict(),
            "semilla": self.semilla,
            "contraste": self.contraste.to_dict(),
            "mediana": self.mediana,
            "tuberias": [t.to_dict() for t in self.tuberias],
        }


def generador_replica(semilla: int, replica: int, flujo: int = 0) -> np.random.Generator:
    """Generador independiente del orden de ejecución para (réplica, flujo)"""
    return np.random.default_rng(np.random.SeedSequence(semilla, spawn_key=(replica, flujo)))


def ejecutar_replica(escenario: EspecificacionEscenario, replica: int,
                     verdad_contraste: float) -> Dict:
    """
    Una réplica: sorteo, asignación, observación y todas las tuberías

    Returns:
        diccionario con el índice de réplica y un registro por tubería
    """
    rng = generador_replica(escenario.semilla, replica)
    potenciales = escenario.proceso.generar(escenario.n, rng, escenario.mediana)
    brazos = aleatorizar(escenario.esquema, potenciales.estratos, np.asarray(potenciales.margenes), rng)
    ensayo = potenciales.observar(brazos)
    omega = omega_para(escenario.esquema)
    cuantil = norm.ppf(0.5 + NIVEL_CONFIANZA / 2.0)

    registros = {}
    for t, tuberia in enumerate(escenario.tuberias):
        rng_tuberia = generador_replica(escenario.semilla, replica, t + 1)
        try:
            resultado = ejecutar_tuberia(ensayo, tuberia, escenario.contraste, omega, rng_tuberia,
                                         funcion_oraculo=escenario.proceso.medias)
        except ErrorAjusteCovariables as e:
            logger.debug("Réplica %d, tubería %s: %s", replica, tuberia.nombre, e)
            registros[tuberia.nombre] = {"fallo": str(e)}
            continue

        ingenuo = resultado.contraste_ingenuo
        registro = {
            "fallo": None,
            "estimacion": ingenuo.estimacion,
            "ee_ingenuo": ingenuo.ee,
            "cubre_ingenuo": abs(ingenuo.estimacion - verdad_contraste) <= cuantil * ingenuo.ee,
            "ingenuo_igual": resultado.ingenuo_igual,
            "rechazo": resultado.rechazo is not None,
            "ee": None,
            "cubre": None,
            "V": None,
        }
        if resultado.contraste is not None:
            registro["ee"] = resultado.contraste.ee
            registro["cubre"] = abs(resultado.contraste.estimacion - verdad_contraste) <= cuantil * resultado.contraste.ee
            registro["V"] = resultado.covarianza.V
        registros[tuberia.nombre] = registro
    return {"replica": replica, "tuberias": registros}


def _ejecutar_lote(args):
    """
    Procesa un lote de réplicas en un proceso trabajador

    Debe estar a nivel de módulo para que ProcessPoolExecutor pueda serializarlo.
    """
    escenario, replicas, verdad_contraste = args
    return [ejecutar_replica(escenario, r, verdad_contraste) for r in replicas]


class ResumenEscenario:
    """
    Métricas de Monte Carlo por tubería

    Attributes:
        escenario: especificación ejecutada
        verdad: θ verdadero
        verdad_contraste: f(θ)
        filas: una entrada por tubería con sesgo, DE, EE medio, PC y conteos
        estimaciones: estimaciones del contraste por tubería, en orden de réplica
    """

    def __init__(self, escenario: EspecificacionEscenario, verdad: np.ndarray,
                 verdad_contraste: float, filas: List[Dict], estimaciones: Dict[str, np.ndarray]):
        self.escenario = escenario
        self.verdad = verdad
        self.verdad_contraste = verdad_contraste
        self.filas = filas
        self.estimaciones = estimaciones

    def fila(self, nombre: str) -> Dict:
        for fila in self.filas:
            if fila["tuberia"] == nombre:
                return fila
        raise KeyError(nombre)

    def tabla(self) -> pd.DataFrame:
        """
        Tabla con todas las entradas multiplicadas por 100

        EE y PC correctos valen '--' cuando el sabor correcto fue rechazado; las
        columnas ingenuas quedan vacías cuando coinciden con las correctas.
        """
        registros = []
        for fila in self.filas:
            tuberia = fila["especificacion"]
            rechazada = fila["ee"] is None and fila["rechazos"] > 0
            registros.append({
                "esquema": str(self.escenario.esquema),
                "modelo": "" if tuberia.estimador == "media" else str(tuberia.modelo),
                "metodo": fila["tuberia"],
                "sesgo": _por_100(fila["sesgo"]),
                "de": _por_100(fila["de"]),
                "ee": "--" if rechazada else _por_100(fila["ee"]),
                "pc": "--" if rechazada else _por_100(fila["pc"]),
                "ee_ingenuo": "" if fila["ingenuo_igual"] else _por_100(fila["ee_ingenuo"]),
                "pc_ingenuo": "" if fila["ingenuo_igual"] else _por_100(fila["pc_ingenuo"]),
            })
        return pd.DataFrame(registros, columns=["esquema", "modelo", "metodo", "sesgo", "de",
                                                "ee", "pc", "ee_ingenuo", "pc_ingenuo"])

    def tabla_figura(self) -> pd.DataFrame:
        """Estimaciones de cada réplica en formato largo (metodo, estimacion)"""
        partes = [pd.DataFrame({"metodo": nombre, "estimacion": valores})
                  for nombre, valores in self.estimaciones.items()]
        return pd.concat(partes, ignore_index=True)

    def to_dict(self) -> Dict:
        filas = []
        for fila in self.filas:
            filas.append({clave: valor for clave, valor in fila.items() if clave != "especificacion"})
        return {
            "escenario": self.escenario.to_dict(),
            "verdad": self.verdad,
            "verdad_contraste": self.verdad_contraste,
            "filas": filas,
            "estimaciones": self.estimaciones,
        }


def _por_100(valor: Optional[float]) -> Optional[float]:
    return None if valor is None else 100.0 * valor


def _media(valores: Sequence) -> Optional[float]:
    valores = [v for v in valores if v is not None]
    return float(np.mean(valores)) if valores else None


def _resumir(escenario: EspecificacionEscenario, resultados: List[Dict],
             verdad: np.ndarray, verdad_contraste: float) -> ResumenEscenario:
    filas, estimaciones = [], {}
    for tuberia in escenario.tuberias:
        registros = [r["tuberias"][tuberia.nombre] for r in resultados]
        validos = [r for r in registros if r["fallo"] is None]
        fallos = len(registros) - len(validos)
        if fallos:
            logger.warning("Tubería %s: %d réplicas excluidas por fallos de ajuste", tuberia.nombre, fallos)
        valores = np.array([r["estimacion"] for r in validos])
        estimaciones[tuberia.nombre] = valores
        con_ee = [r for r in validos if r["ee"] is not None]
        matrices = [r["V"] for r in con_ee]
        filas.append({
            "tuberia": tuberia.nombre,
            "especificacion": tuberia,
            "replicas_usadas": len(validos),
            "fallos": fallos,
            "rechazos": sum(1 for r in validos if r["rechazo"]),
            "sesgo": float(valores.mean() - verdad_contraste) if valores.size else None,
            "de": float(valores.std(ddof=1)) if valores.size >= 2 else None,
            "ee": _media([r["ee"] for r in con_ee]),
            "pc": _media([float(r["cubre"]) for r in con_ee]),
            "ee_ingenuo": _media([r["ee_ingenuo"] for r in validos]),
            "pc_ingenuo": _media([float(r["cubre_ingenuo"]) for r in validos]),
            "ingenuo_igual": bool(validos) and all(r["ingenuo_igual"] for r in validos),
            "V_media": np.mean(matrices, axis=0) if matrices else None,
            "V_ee_mc": (np.std(matrices, axis=0, ddof=1) / math.sqrt(len(matrices))
                        if len(matrices) >= 2 else None),
        })
    return ResumenEscenario(escenario, verdad, verdad_contraste, filas, estimaciones)


def ejecutar_escenario(escenario: EspecificacionEscenario, hilos: int = 1) -> ResumenEscenario:
    """
    Ejecuta todas las réplicas y agrega las métricas en orden de réplica

    La réplica r usa la semilla derivada (semilla, r), de modo que el resumen no
    depende de la cantidad de procesos.

    Args:
        escenario: especificación
        hilos: procesos trabajadores (1 ejecuta en el proceso actual)

    Returns:
        ResumenEscenario
    """
    verdad = escenario.proceso.valor_verdadero()
    verdad_contraste = escenario.contraste.evaluar(verdad)
    logger.info("Escenario %s: %d réplicas de n=%d con %s (verdad %.6g)",
                escenario.proceso.nombre, escenario.replicas, escenario.n,
                escenario.esquema, verdad_contraste)

    indices = list(range(escenario.replicas))
    if hilos <= 1:
        resultados = _ejecutar_lote((escenario, indices, verdad_contraste))
    else:
        lotes = [list(lote) for lote in np.array_split(indices, min(hilos * 4, len(indices)))]
        resultados = []
        with ProcessPoolExecutor(max_workers=hilos) as ejecutor:
            futuros = [ejecutor.submit(_ejecutar_lote, (escenario, [int(r) for r in lote], verdad_contraste))
                       for lote in lotes if lote]
            for futuro in as_completed(futuros):
                resultados.extend(futuro.result())
        resultados.sort(key=lambda r: r["replica"])

    return _resumir(escenario, resultados, verdad, verdad_contraste)


def tuberias_figura1() -> List[EspecificacionTuberia]:
    """g-computación y AIPW con modelo binomial negativo sin indicadores de estrato"""
    modelo = EspecificacionModelo("binomial_negativa", incluir_estratos=False)
    return [EspecificacionTuberia("gcomp", modelo, estimador="gcomp"),
            EspecificacionTuberia("aipw", modelo, estimador="aipw")]


def experimento_figura1(replicas: int = 1000, n: int = 500, semilla: int = 2024,
                        hilos: int = 1) -> ResumenEscenario:
    """
    Distribución de las estimaciones de g-computación y AIPW bajo el proceso de Poisson

    Raises:
        ErrorConfiguracion: si replicas < 100
    """
    if replicas < 100:
        raise ErrorConfiguracion("El experimento de densidades necesita al menos 100 réplicas")
    proceso = Figura1()
    escenario = EspecificacionEscenario(proceso, n, replicas,
                                        EspecificacionEsquema("simple", proceso.pi),
                                        tuberias_figura1(), semilla, Contraste.diferencia(1, 2))
    return ejecutar_escenario(escenario, hilos)
