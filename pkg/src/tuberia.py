"""
Tuberías de estimación: modelo de trabajo, calibración, estimador y sabor de varianza
"""
import logging
from typing import Callable, Dict, Optional

import numpy as np

try:
    from .aleatorizacion import EspecificacionOmega
    from .datos import Contraste, EnsayoClinico
    from .errores import ErrorConfiguracion, ErrorEstimacion, RechazoVarianza
    from .estimadores import (MODOS_PI_PLIEGUE, EstimacionTheta, PlanPliegues, aipw,
                              calibracion_conjunta, calibrar_lineal, coeficientes_lineales,
                              estimador_cruzado, g_computacion, media_muestral,
                              predicciones_cruzadas)
    from .modelos_trabajo import (EspecificacionModelo, ajustar, brechas_prediccion,
                                  calibrar_z, correcciones_z)
    from .varianza import (SABORES, EstimacionCovarianza,
                           componentes_varianza, diagnostico_condiciones,
                           error_estandar_delta, vhat_ingenua, vhat_jc, vhat_robusta,
                           vhat_universal)
except ImportError:
    from aleatorizacion import EspecificacionOmega
    from datos import Contraste, EnsayoClinico
    from errores import ErrorConfiguracion, ErrorEstimacion, RechazoVarianza
    from estimadores import (MODOS_PI_PLIEGUE, EstimacionTheta, PlanPliegues, aipw,
                             calibracion_conjunta, calibrar_lineal, coeficientes_lineales,
                             estimador_cruzado, g_computacion, media_muestral,
                             predicciones_cruzadas)
    from modelos_trabajo import (EspecificacionModelo, ajustar, brechas_prediccion,
                                 calibrar_z, correcciones_z)
    from varianza import (SABORES, EstimacionCovarianza,
                          componentes_varianza, diagnostico_condiciones,
                          error_estandar_delta, vhat_ingenua, vhat_jc, vhat_robusta,
                          vhat_universal)

logger = logging.getLogger(__name__)

CALIBRACIONES = ("ninguna", "z", "lineal", "conjunta")
ESTIMADORES = ("media", "gcomp", "aipw", "cruzado")


class EspecificacionTuberia:
    """
    Una fila de resultados: modelo → calibración → estimador → sabor de varianza

    Attributes:
        nombre: etiqueta de la fila en los reportes
        modelo: especificación del modelo de trabajo
        calibracion: 'ninguna', 'z', 'lineal' o 'conjunta'
        estimador: 'media', 'gcomp', 'aipw' o 'cruzado'
        pliegues: J del ajuste cruzado
        pi_pliegue: 'pliegue' o 'global'
        sabor: 'auto' o uno de SABORES
    """

    def __init__(self, nombre: str, modelo: EspecificacionModelo,
                 calibracion: str = "ninguna", estimador: str = "aipw",
                 pliegues: int = 5, pi_pliegue: str = "pliegue", sabor: str = "auto"):
        if calibracion not in CALIBRACIONES:
            raise ErrorConfiguracion(f"Calibración desconocida en '{nombre}': {calibracion}")
        if estimador not in ESTIMADORES:
            raise ErrorConfiguracion(f"Estimador desconocido en '{nombre}': {estimador}")
        if pi_pliegue not in MODOS_PI_PLIEGUE:
            raise ErrorConfiguracion(f"pi_pliegue desconocido en '{nombre}': {pi_pliegue}")
        if sabor != "auto" and sabor not in SABORES:
            raise ErrorConfiguracion(f"Sabor de varianza desconocido en '{nombre}': {sabor}")
        if estimador == "media" and calibracion != "ninguna":
            raise ErrorConfiguracion(f"La media muestral no admite calibración ('{nombre}')")
        if calibracion == "conjunta" and estimador not in ("aipw", "cruzado"):
            raise ErrorConfiguracion(f"La calibración conjunta se combina con aipw o cruzado ('{nombre}')")
        if sabor == "jc" and calibracion != "conjunta":
            raise ErrorConfiguracion(f"El sabor 'jc' necesita calibración conjunta ('{nombre}')")
        if estimador == "cruzado" and int(pliegues) < 2:
            raise ErrorConfiguracion(f"El ajuste cruzado necesita al menos 2 pliegues ('{nombre}')")
        self.nombre = nombre
        self.modelo = modelo
        self.calibracion = calibracion
        self.estimador = estimador
        self.pliegues = int(pliegues)
        self.pi_pliegue = pi_pliegue
        self.sabor = sabor

    @classmethod
    def from_dict(cls, data: Dict) -> 'EspecificacionTuberia':
        if not isinstance(data, dict) or "nombre" not in data:
            raise ErrorConfiguracion("Cada tubería necesita el campo 'nombre'")
        modelo = data.get("modelo", {"familia": "cero"})
        if not isinstance(modelo, dict) or "familia" not in modelo:
            raise ErrorConfiguracion(f"El modelo de '{data['nombre']}' necesita el campo 'familia'")
        try:
            especificacion = EspecificacionModelo(modelo["familia"], modelo.get("incluir_estratos"),
                                                  modelo.get("covariables"), modelo.get("parametros"))
        except ValueError as e:
            raise ErrorConfiguracion(f"Tubería '{data['nombre']}': {e}")
        return cls(data["nombre"], especificacion,
                   calibracion=data.get("calibracion", "ninguna"),
                   estimador=data.get("estimador", "aipw"),
                   pliegues=data.get("pliegues", 5),
                   pi_pliegue=data.get("pi_pliegue", "pliegue"),
                   sabor=data.get("sabor", "auto"))

    def to_dict(self) -> Dict:
        return {"nombre": self.nombre, "modelo": self.modelo.to_dict(),
                "calibracion": self.calibracion, "estimador": self.estimador,
                "pliegues": self.pliegues, "pi_pliegue": self.pi_pliegue, "sabor": self.sabor}


def resolver_sabor(tuberia: EspecificacionTuberia, omega: EspecificacionOmega) -> str:
    """
    Sabor de varianza correcto para una tubería bajo un esquema

    Con 'auto': calibración conjunta → 'jc'; calibración por estrato, GLM
    canónico con indicadores de estrato u oráculo → 'universal'; en otro caso
    'robusta' si Ω(z) se conoce.

    Raises:
        RechazoVarianza: si el sabor pedido o deducido necesita Ω(z) y el esquema no la tiene
    """
    sabor = tuberia.sabor
    if sabor == "auto":
        modelo = tuberia.modelo
        if tuberia.calibracion == "conjunta":
            return "jc"
        if tuberia.estimador != "media" and (
                tuberia.calibracion == "z"
                or modelo.familia == "oraculo"
                or (modelo.es_canonico and modelo.incluir_estratos and tuberia.calibracion == "ninguna")):
            return "universal"
        sabor = "robusta"
    if sabor == "robusta" and not omega.es_conocida:
        raise RechazoVarianza(f"La tubería '{tuberia.nombre}' necesita la varianza robusta y "
                              "el esquema no tiene Ω(z) conocida", ["jc", "universal"])
    return sabor


class ResultadoTuberia:
    """
    Resultado de ejecutar una tubería sobre un ensayo

    Attributes:
        tuberia: especificación ejecutada
        estimacion: θ̂ y predicciones
        contraste: f(θ̂) con el EE del sabor correcto (None si se rechazó)
        contraste_ingenuo: f(θ̂) con el EE ingenuo
        covarianza: V̂ del sabor correcto (None si se rechazó)
        covarianza_ingenua: V̂ ingenua
        ingenuo_igual: el EE ingenuo coincide con el correcto (se deja vacío en reportes)
        rechazo: RechazoVarianza si el sabor correcto no es válido para el esquema
        brechas: brecha de insesgadez de predicción por brazo
        diagnosticos: condiciones de aplicabilidad universal y ganancia garantizada
    """

    def __init__(self, tuberia, estimacion, contraste, contraste_ingenuo, covarianza,
                 covarianza_ingenua, ingenuo_igual, rechazo=None, brechas=None, diagnosticos=None):
        self.tuberia = tuberia
        self.estimacion = estimacion
        self.contraste = contraste
        self.contraste_ingenuo = contraste_ingenuo
        self.covarianza = covarianza
        self.covarianza_ingenua = covarianza_ingenua
        self.ingenuo_igual = ingenuo_igual
        self.rechazo = rechazo
        self.brechas = brechas
        self.diagnosticos = diagnosticos

    @property
    def sabor(self) -> Optional[str]:
        return None if self.covarianza is None else self.covarianza.sabor

    def to_dict(self) -> Dict:
        data = {
            "tuberia": self.tuberia.to_dict(),
            "estimacion": self.estimacion.to_dict(),
            "sabor": self.sabor,
            "contraste": None if self.contraste is None else self.contraste.to_dict(),
            "contraste_ingenuo": (None if self.ingenuo_igual or self.contraste_ingenuo is None
                                  else self.contraste_ingenuo.to_dict()),
            "V": None if self.covarianza is None else self.covarianza.to_dict(),
            "rechazo": None if self.rechazo is None else str(self.rechazo),
        }
        if self.brechas is not None:
            data["brechas_insesgadez"] = self.brechas
        if self.diagnosticos is not None:
            data["diagnosticos"] = self.diagnosticos
        return data


def estimar(ensayo: EnsayoClinico, tuberia: EspecificacionTuberia,
            rng: np.random.Generator,
            funcion_oraculo: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> EstimacionTheta:
    """
    Ajusta el modelo, aplica la calibración y calcula θ̂

    Raises:
        ErrorConfiguracion: si la tubería usa el oráculo y no hay medias verdaderas
        ErrorModelo: si el ajuste falla
        ErrorEstimacion: si algún brazo, pliegue o celda está vacío
    """
    if tuberia.estimador == "media":
        return media_muestral(ensayo)

    modelo = tuberia.modelo
    if modelo.familia == "oraculo":
        if funcion_oraculo is None:
            raise ErrorConfiguracion(f"La tubería '{tuberia.nombre}' usa el oráculo, "
                                     "que solo existe en simulación")
        modelo = modelo.con_funcion_oraculo(funcion_oraculo)

    if tuberia.estimador == "cruzado":
        plan = PlanPliegues.crear(ensayo.n, tuberia.pliegues, rng)
        mu, _ = predicciones_cruzadas(ensayo, modelo, plan, rng)
        if tuberia.calibracion == "conjunta":
            cruda = EstimacionTheta(np.zeros(ensayo.k), "cruzado", mu, plan,
                                    modo_pi=tuberia.pi_pliegue)
            return calibracion_conjunta(ensayo, cruda)
        if tuberia.calibracion == "z":
            mu = mu + correcciones_z(mu, ensayo)[ensayo.estratos]
        elif tuberia.calibracion == "lineal":
            mu = mu @ coeficientes_lineales(mu, ensayo)[0]
        theta, pi_usado = estimador_cruzado(ensayo, mu, plan, tuberia.pi_pliegue)
        metodo = "cruzado" if tuberia.calibracion == "ninguna" else f"cruzado+{tuberia.calibracion}"
        return EstimacionTheta(theta, metodo, mu, plan, pi_usado, modo_pi=tuberia.pi_pliegue)

    ajuste = ajustar(modelo, ensayo, rng=rng)
    resumen_ajuste = ajuste.to_dict()
    if tuberia.calibracion == "conjunta":
        estimacion = calibracion_conjunta(ensayo, ajuste)
        estimacion.ajuste = resumen_ajuste
        return estimacion
    if tuberia.calibracion == "z":
        ajuste = calibrar_z(ajuste, ensayo)
    elif tuberia.calibracion == "lineal":
        ajuste = calibrar_lineal(ensayo, ajuste)
    estimacion = g_computacion(ensayo, ajuste) if tuberia.estimador == "gcomp" else aipw(ensayo, ajuste)
    if tuberia.calibracion != "ninguna":
        estimacion.metodo = f"{estimacion.metodo}+{tuberia.calibracion}"
    estimacion.ajuste = resumen_ajuste
    return estimacion


def ejecutar_tuberia(ensayo: EnsayoClinico, tuberia: EspecificacionTuberia,
                     contraste: Contraste, omega: EspecificacionOmega,
                     rng: np.random.Generator,
                     funcion_oraculo: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                     diagnosticos: bool = False) -> ResultadoTuberia:
    """
    Ejecuta una tubería completa: θ̂, contraste, EE correcto y EE ingenuo

    Un rechazo de varianza no interrumpe la ejecución: queda registrado en el
    resultado y el contraste correcto queda en None.

    Args:
        ensayo: ensayo observado
        tuberia: especificación
        contraste: función de θ a estimar
        omega: Ω(z) del esquema con que se aleatorizó
        rng: generador para pliegues y modelos aleatorios
        funcion_oraculo: medias verdaderas (solo simulación)
        diagnosticos: calcula los diagnósticos de condiciones

    Raises:
        ErrorModelo, ErrorEstimacion: si falla la estimación o la forma cuadrática no es positiva
    """
    contraste.validar(ensayo.k)
    estimacion = estimar(ensayo, tuberia, rng, funcion_oraculo)
    componentes = componentes_varianza(ensayo, estimacion)
    covarianza_ingenua = vhat_ingenua(componentes)
    contraste_ingenuo = error_estandar_delta(covarianza_ingenua, estimacion, contraste, ensayo.n)

    covarianza, resultado_contraste, rechazo = None, None, None
    try:
        sabor = resolver_sabor(tuberia, omega)
    except RechazoVarianza as e:
        logger.debug("Tubería %s: %s", tuberia.nombre, e)
        sabor, rechazo = None, e
    if sabor is not None:
        covarianza = _covarianza(sabor, ensayo, estimacion, componentes, omega)
        resultado_contraste = error_estandar_delta(covarianza, estimacion, contraste, ensayo.n)

    ingenuo_igual = sabor in ("universal", "ingenua", "jc") or omega.es_simple
    brechas = None if tuberia.estimador == "media" else brechas_prediccion(estimacion.mu, ensayo)
    diagnostico = diagnostico_condiciones(ensayo, estimacion, omega) if diagnosticos else None
    return ResultadoTuberia(tuberia, estimacion, resultado_contraste, contraste_ingenuo,
                            covarianza, covarianza_ingenua, ingenuo_igual, rechazo,
                            brechas, diagnostico)


def _covarianza(sabor: str, ensayo: EnsayoClinico, estimacion: EstimacionTheta,
                componentes, omega: EspecificacionOmega) -> EstimacionCovarianza:
    if sabor == "jc":
        return vhat_jc(ensayo, estimacion)
    if sabor == "universal":
        return vhat_universal(componentes)
    if sabor == "ingenua":
        return vhat_ingenua(componentes)
    if sabor == "robusta":
        return vhat_robusta(componentes, omega)
    raise ErrorEstimacion(f"Sabor de varianza desconocido: {sabor}")
