"""
Clase principal para coordinar el análisis de ensayos y las simulaciones
"""
import logging
import os
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

try:
    from .aleatorizacion import (TIPOS_ESQUEMA, EspecificacionEsquema, interpretar_pi, omega_para,
                                 verificar_tasa_asignacion)
    from .datos import Contraste, EnsayoClinico, resumir_estratos
    from .errores import (ErrorAjusteCovariables, ErrorAleatorizacion, ErrorConfiguracion,
                          ErrorDatos, RechazoVarianza)
    from .manejador_archivos import ManejadorArchivos
    from .simulacion import (MEDIANAS, EspecificacionEscenario, ResumenEscenario, crear_proceso,
                             ejecutar_escenario, tuberias_figura1)
    from .tuberia import EspecificacionTuberia, ResultadoTuberia, ejecutar_tuberia
except ImportError:
    from aleatorizacion import (TIPOS_ESQUEMA, EspecificacionEsquema, interpretar_pi, omega_para,
                                verificar_tasa_asignacion)
    from datos import Contraste, EnsayoClinico, resumir_estratos
    from errores import (ErrorAjusteCovariables, ErrorAleatorizacion, ErrorConfiguracion,
                         ErrorDatos, RechazoVarianza)
    from manejador_archivos import ManejadorArchivos
    from simulacion import (MEDIANAS, EspecificacionEscenario, ResumenEscenario, crear_proceso,
                            ejecutar_escenario, tuberias_figura1)
    from tuberia import EspecificacionTuberia, ResultadoTuberia, ejecutar_tuberia

logger = logging.getLogger(__name__)

MODOS = ("analizar", "simular")
SECCIONES = ("modo", "semilla", "hilos", "salida", "datos", "aleatorizacion",
             "escenario", "tuberias", "contraste", "reporte")
CODIGO_EXITO = 0
CODIGO_ERROR = 1
CODIGO_CONFIGURACION = 2
CODIGO_RECHAZO = 3


class ConfiguracionEjecucion:
    """
    Configuración validada de una ejecución

    Attributes:
        modo: 'analizar' o 'simular'
        semilla: semilla maestra (entero de 64 bits sin signo)
        hilos: procesos trabajadores para la simulación
        salida: directorio de reportes
        datos: esquema de columnas y ruta del CSV (solo 'analizar')
        pi: proporciones de asignación, si se dieron
        aleatorizacion: sección cruda del esquema
        escenario: sección cruda del escenario (solo 'simular')
        tuberias: tuberías a ejecutar
        contraste: función de θ a reportar
        reporte: opciones de presentación ('escala_100', 'cifras', 'diagnosticos')
    """

    def __init__(self, modo: str, semilla: int, hilos: int, salida: str,
                 datos: Optional[Dict], pi: Optional[List[float]], aleatorizacion: Dict,
                 escenario: Optional[Dict], tuberias: List[EspecificacionTuberia],
                 contraste: Contraste, reporte: Dict):
        self.modo = modo
        self.semilla = semilla
        self.hilos = hilos
        self.salida = salida
        self.datos = datos
        self.pi = pi
        self.aleatorizacion = aleatorizacion
        self.escenario = escenario
        self.tuberias = tuberias
        self.contraste = contraste
        self.reporte = reporte

    @classmethod
    def from_dict(cls, data: Dict, directorio_base: str = ".") -> 'ConfiguracionEjecucion':
        """
        Valida y construye la configuración a partir del JSON leído

        Args:
            data: contenido del archivo de configuración
            directorio_base: directorio contra el cual se resuelven rutas relativas

        Raises:
            ErrorConfiguracion: ante cualquier campo faltante o inválido
        """
        if not isinstance(data, dict):
            raise ErrorConfiguracion("La configuración debe ser un objeto JSON")
        desconocidas = sorted(set(data) - set(SECCIONES))
        if desconocidas:
            raise ErrorConfiguracion(f"Secciones desconocidas en la configuración: {desconocidas}")

        modo = data.get("modo")
        if modo not in MODOS:
            raise ErrorConfiguracion(f"'modo' debe ser uno de {list(MODOS)}, llegó {modo!r}")
        semilla = cls._entero(data.get("semilla", 0), "semilla", 0, 2 ** 64 - 1)
        hilos = cls._entero(data.get("hilos", os.environ.get("AJUSTE_HILOS", 1)), "hilos", 1, 1024)
        salida = os.path.join(directorio_base, str(data.get("salida", "resultados")))

        aleatorizacion = data.get("aleatorizacion")
        if not isinstance(aleatorizacion, dict) or aleatorizacion.get("tipo") not in TIPOS_ESQUEMA:
            raise ErrorConfiguracion(f"'aleatorizacion.tipo' debe ser uno de {list(TIPOS_ESQUEMA)}")
        try:
            pi = interpretar_pi(aleatorizacion["pi"]) if "pi" in aleatorizacion else None
            contraste = Contraste.from_dict(data.get("contraste", {"tipo": "diferencia", "a": 1, "b": 2}))
        except ErrorDatos as e:
            raise ErrorConfiguracion(str(e))

        datos, escenario = None, None
        if modo == "analizar":
            datos = data.get("datos")
            if not isinstance(datos, dict) or "ruta" not in datos:
                raise ErrorConfiguracion("El modo 'analizar' necesita la sección 'datos' con 'ruta'")
            datos = dict(datos, ruta=os.path.join(directorio_base, datos["ruta"]))
        else:
            escenario = data.get("escenario")
            if not isinstance(escenario, dict) or "proceso" not in escenario:
                raise ErrorConfiguracion("El modo 'simular' necesita la sección 'escenario' con 'proceso'")
            if escenario.get("mediana", "muestral") not in MEDIANAS:
                raise ErrorConfiguracion(f"'escenario.mediana' debe ser uno de {list(MEDIANAS)}")

        tuberias_crudas = data.get("tuberias")
        if tuberias_crudas is None and modo == "simular" and escenario["proceso"] == "figura1":
            tuberias = tuberias_figura1()
        elif not isinstance(tuberias_crudas, list) or not tuberias_crudas:
            raise ErrorConfiguracion("'tuberias' debe ser una lista no vacía")
        else:
            tuberias = [EspecificacionTuberia.from_dict(t) for t in tuberias_crudas]
        nombres = [t.nombre for t in tuberias]
        if len(set(nombres)) != len(nombres):
            raise ErrorConfiguracion(f"Nombres de tubería repetidos: {nombres}")
        if modo == "analizar" and any(t.modelo.familia == "oraculo" for t in tuberias):
            raise ErrorConfiguracion("El modelo 'oraculo' solo existe en simulación")

        reporte = {"escala_100": False, "cifras": 4, "diagnosticos": modo == "analizar"}
        reporte.update(data.get("reporte", {}))
        reporte["cifras"] = cls._entero(reporte["cifras"], "reporte.cifras", 1, 17)

        configuracion = cls(modo, semilla, hilos, salida, datos, pi, aleatorizacion,
                            escenario, tuberias, contraste, reporte)
        if modo == "simular":
            configuracion.crear_escenario()
        elif pi is not None:
            configuracion.crear_esquema(pi)
        return configuracion

    @staticmethod
    def _entero(valor, campo: str, minimo: int, maximo: int) -> int:
        try:
            entero = int(valor)
        except (TypeError, ValueError):
            raise ErrorConfiguracion(f"'{campo}' debe ser un entero, llegó {valor!r}")
        if isinstance(valor, float) and valor != entero:
            raise ErrorConfiguracion(f"'{campo}' debe ser un entero, llegó {valor!r}")
        if not minimo <= entero <= maximo:
            raise ErrorConfiguracion(f"'{campo}' debe estar entre {minimo} y {maximo}, llegó {entero}")
        return entero

    def crear_esquema(self, pi) -> EspecificacionEsquema:
        try:
            return EspecificacionEsquema.from_dict(self.aleatorizacion, pi)
        except ErrorAleatorizacion as e:
            raise ErrorConfiguracion(str(e))

    def crear_escenario(self) -> EspecificacionEscenario:
        """
        Raises:
            ErrorConfiguracion: si el proceso, el esquema o el escenario son inválidos
        """
        try:
            proceso = crear_proceso(self.escenario["proceso"])
            if self.pi is not None and not np.allclose(self.pi, proceso.pi, atol=1e-9):
                raise ErrorConfiguracion(f"'aleatorizacion.pi' = {self.pi} no coincide con el "
                                         f"proceso ({proceso.pi})")
            return EspecificacionEscenario(proceso, self.escenario.get("n", 1000),
                                           self.escenario.get("replicas", 1000),
                                           self.crear_esquema(proceso.pi), self.tuberias,
                                           self.semilla, self.contraste,
                                           self.escenario.get("mediana", "muestral"))
        except (ErrorDatos, TypeError, ValueError) as e:
            raise ErrorConfiguracion(f"Escenario inválido: {e}")


class AnalizadorEnsayo:
    """
    Clase principal que coordina la carga, el análisis, la simulación y los reportes
    """

    def __init__(self):
        self.ensayo_actual: Optional[EnsayoClinico] = None
        self.historial_operaciones: List[Dict] = []

    def cargar(self, ruta_archivo: str, esquema: Dict,
               pi: Optional[List[float]] = None) -> EnsayoClinico:
        """
        Carga un ensayo desde un CSV

        Args:
            ruta_archivo: Ruta al CSV
            esquema: Rol de cada columna
            pi: Proporciones de asignación

        Returns:
            Ensayo cargado
        """
        ensayo = ManejadorArchivos.leer_csv(ruta_archivo, esquema, pi)
        self.ensayo_actual = ensayo
        self._agregar_operacion("cargar", f"Cargado {ensayo} desde {os.path.basename(ruta_archivo)}")
        return ensayo

    def analizar(self, ensayo: EnsayoClinico, configuracion: ConfiguracionEjecucion,
                 esquema: EspecificacionEsquema) -> Tuple[List[ResultadoTuberia], Dict]:
        """
        Ejecuta todas las tuberías sobre un ensayo observado

        Returns:
            resultados por tubería y el reporte serializable
        """
        omega = omega_para(esquema)
        resultados = []
        for t, tuberia in enumerate(configuracion.tuberias):
            rng = np.random.default_rng(np.random.SeedSequence(configuracion.semilla, spawn_key=(t,)))
            resultado = ejecutar_tuberia(ensayo, tuberia, configuracion.contraste, omega, rng,
                                         diagnosticos=configuracion.reporte["diagnosticos"])
            resultados.append(resultado)
            self._agregar_operacion("tuberia", f"{tuberia.nombre}: sabor {resultado.sabor}")

        advertencias = []
        try:
            tasa = verificar_tasa_asignacion(ensayo, esquema)
        except ErrorAleatorizacion as e:
            tasa = None
            advertencias.append(str(e))
        reporte = {
            "ensayo": ensayo.to_dict(),
            "estratos": resumir_estratos(ensayo).to_dict(orient="records"),
            "esquema": esquema.to_dict(),
            "contraste": configuracion.contraste.to_dict(),
            "semilla": configuracion.semilla,
            "tasa_asignacion": tasa,
            "advertencias": advertencias,
            "tuberias": [resultado.to_dict() for resultado in resultados],
        }
        return resultados, reporte

    def simular(self, configuracion: ConfiguracionEjecucion) -> ResumenEscenario:
        """Ejecuta el escenario de Monte Carlo de la configuración"""
        escenario = configuracion.crear_escenario()
        resumen = ejecutar_escenario(escenario, configuracion.hilos)
        self._agregar_operacion("simulacion", f"{escenario.replicas} réplicas de {escenario.proceso.nombre}")
        return resumen

    def procesar_configuracion(self, configuracion: ConfiguracionEjecucion) -> Dict:
        """
        Procesa una configuración completa: ejecuta el modo pedido y escribe los reportes

        Los reportes se arman en memoria y se escriben solo al final, de modo
        que un error deja el directorio de salida sin archivos parciales.

        Returns:
            Diccionario con éxito, código de salida, operaciones, archivos y errores
        """
        resultado = {
            "exito": False,
            "codigo": CODIGO_ERROR,
            "operaciones_realizadas": [],
            "archivos": [],
            "errores": [],
        }
        logger.info("Procesando configuración en modo %s con semilla %d", configuracion.modo, configuracion.semilla)
        try:
            if configuracion.modo == "analizar":
                archivos = self._procesar_analisis(configuracion, resultado)
            else:
                archivos = self._procesar_simulacion(configuracion, resultado)
            for nombre, contenido in archivos.items():
                ruta = os.path.join(configuracion.salida, nombre)
                if isinstance(contenido, pd.DataFrame):
                    ManejadorArchivos.escribir_tabla(contenido, ruta)
                elif isinstance(contenido, str):
                    ManejadorArchivos.escribir_texto(contenido, ruta)
                else:
                    ManejadorArchivos.escribir_json(contenido, ruta)
                resultado["archivos"].append(ruta)
            resultado["operaciones_realizadas"].append("guardado")
            if not resultado["errores"]:
                resultado["exito"] = True
                resultado["codigo"] = CODIGO_EXITO
        except RechazoVarianza as e:
            resultado["errores"].append(str(e))
            logger.warning("Varianza rechazada: %s", e)
            resultado["codigo"] = CODIGO_RECHAZO
        except (ErrorConfiguracion, ErrorDatos, ErrorAleatorizacion, FileNotFoundError) as e:
            resultado["errores"].append(str(e))
            resultado["codigo"] = CODIGO_CONFIGURACION
        except ErrorAjusteCovariables as e:
            resultado["errores"].append(str(e))
            resultado["codigo"] = CODIGO_ERROR
        return resultado

    def _procesar_analisis(self, configuracion: ConfiguracionEjecucion, resultado: Dict) -> Dict:
        datos = dict(configuracion.datos)
        ruta = datos.pop("ruta")
        ensayo = self.cargar(ruta, datos, configuracion.pi)
        resultado["operaciones_realizadas"].append("carga")

        esquema = configuracion.crear_esquema(ensayo.pi)
        resultados, reporte = self.analizar(ensayo, configuracion, esquema)
        resultado["operaciones_realizadas"].append("analisis")

        # los rechazos se reportan en el archivo y también fijan el código de salida
        for res in resultados:
            if res.rechazo is not None:
                resultado["errores"].append(f"Tubería '{res.tuberia.nombre}': {res.rechazo}")
                resultado["codigo"] = CODIGO_RECHAZO
                logger.warning("Tubería %s sin varianza válida: %s", res.tuberia.nombre, res.rechazo)
        resultado["estadisticas"] = {"n": ensayo.n, "k": ensayo.k, "estratos": ensayo.num_estratos}
        return {
            "reporte.json": reporte,
            "reporte.txt": self.tabla_texto_analisis(resultados, configuracion.reporte),
            "estratos.csv": resumir_estratos(ensayo),
        }

    def _procesar_simulacion(self, configuracion: ConfiguracionEjecucion, resultado: Dict) -> Dict:
        resumen = self.simular(configuracion)
        resultado["operaciones_realizadas"].append("simulacion")
        resultado["estadisticas"] = {fila["tuberia"]: {"fallos": fila["fallos"], "rechazos": fila["rechazos"]}
                                     for fila in resumen.filas}
        return {
            "resumen.csv": resumen.tabla(),
            "resumen.json": resumen.to_dict(),
            "estimaciones.csv": resumen.tabla_figura(),
            "resumen.txt": self.tabla_texto_simulacion(resumen, configuracion.reporte),
        }

    @staticmethod
    def tabla_texto_analisis(resultados: List[ResultadoTuberia], opciones: Dict) -> str:
        """
        Tabla legible del análisis: estimación, EE y valor p, correctos e ingenuos

        Las columnas ingenuas quedan vacías cuando coinciden con las correctas.
        """
        escala = 100.0 if opciones.get("escala_100") else 1.0
        cifras = opciones.get("cifras", 4)
        filas = []
        for resultado in resultados:
            correcto = resultado.contraste
            ingenuo = None if resultado.ingenuo_igual else resultado.contraste_ingenuo
            filas.append({
                "tuberia": resultado.tuberia.nombre,
                "sabor": resultado.sabor or "--",
                "theta": " ".join(_redondear(v, cifras) for v in resultado.estimacion.theta),
                "estimacion": _redondear(resultado.contraste_ingenuo.estimacion * escala, cifras),
                "ee": "--" if correcto is None else _redondear(correcto.ee * escala, cifras),
                "p": "--" if correcto is None else _redondear(correcto.p, cifras),
                "ee_ingenuo": "" if ingenuo is None else _redondear(ingenuo.ee * escala, cifras),
                "p_ingenuo": "" if ingenuo is None else _redondear(ingenuo.p, cifras),
            })
        texto = pd.DataFrame(filas).to_string(index=False) + "\n"

        lineas = []
        for resultado in resultados:
            if resultado.brechas is not None:
                brechas = " ".join(_redondear(v, cifras) for v in np.ravel(resultado.brechas))
                lineas.append(f"{resultado.tuberia.nombre}: brechas de insesgadez {brechas}")
            descartadas = _descartadas(resultado)
            if descartadas:
                lineas.append(f"{resultado.tuberia.nombre}: columnas descartadas {descartadas}")
            if resultado.rechazo is not None:
                lineas.append(f"{resultado.tuberia.nombre}: {resultado.rechazo}")
        if lineas:
            texto += "\n" + "\n".join(lineas) + "\n"
        return texto

    @staticmethod
    def tabla_texto_simulacion(resumen: ResumenEscenario, opciones: Dict) -> str:
        """Tabla legible del resumen de simulación (siempre ×100, como la tabla CSV)"""
        cifras = opciones.get("cifras", 4)
        tabla = resumen.tabla()
        for columna in ("sesgo", "de", "ee", "pc", "ee_ingenuo", "pc_ingenuo"):
            tabla[columna] = [valor if isinstance(valor, str) else _redondear(valor, cifras)
                              for valor in tabla[columna]]
        encabezado = (f"{resumen.escenario.proceso.nombre}: verdad {_redondear(resumen.verdad_contraste, cifras)}, "
                      f"{resumen.escenario.replicas} réplicas de n={resumen.escenario.n}\n")
        return encabezado + tabla.to_string(index=False) + "\n"

    def _agregar_operacion(self, tipo: str, descripcion: str) -> None:
        self.historial_operaciones.append({"tipo": tipo, "descripcion": descripcion})

    def obtener_historial(self) -> List[Dict]:
        """
        Obtiene el historial de operaciones

        Returns:
            Lista con el historial de operaciones
        """
        return self.historial_operaciones.copy()

    def limpiar_historial(self) -> None:
        self.historial_operaciones.clear()


def _redondear(valor, cifras: int) -> str:
    if valor is None or (isinstance(valor, float) and not np.isfinite(valor)):
        return "NA"
    return f"{float(valor):.{cifras}g}"


def _descartadas(resultado: ResultadoTuberia) -> List[str]:
    descartadas = []
    ajuste = resultado.estimacion.ajuste
    if ajuste is not None:
        for a, brazo in enumerate(ajuste.get("brazos", [])):
            for nombre in (brazo.get("info") or {}).get("descartadas", []):
                descartadas.append(f"brazo {a + 1}: {nombre}")
    calibracion = resultado.estimacion.calibracion
    if calibracion is not None:
        for a, nombres in enumerate(calibracion.get("descartadas", [])):
            descartadas.extend(f"calibración brazo {a + 1}: {nombre}" for nombre in nombres)
    return descartadas
