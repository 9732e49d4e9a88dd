"""
Clase para manejar la lectura y escritura de ensayos (CSV), configuraciones y reportes (JSON)
"""
import json
import math
import os
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd

try:
    from .datos import EnsayoClinico, codificar_estratos
    from .errores import ErrorConfiguracion, ErrorDatos
except ImportError:
    from datos import EnsayoClinico, codificar_estratos
    from errores import ErrorConfiguracion, ErrorDatos


CAMPOS_ESQUEMA = ("respuesta", "brazo", "estratos", "covariables", "one_hot")


class ManejadorArchivos:
    """
    Se encarga de la lectura y escritura de ensayos, configuraciones y reportes
    """

    @staticmethod
    def leer_csv(ruta_archivo: str, esquema: Dict,
                 pi: Optional[Sequence[float]] = None) -> EnsayoClinico:
        """
        Lee un ensayo desde un archivo CSV con fila de encabezado

        Args:
            ruta_archivo: Ruta al archivo CSV (UTF-8)
            esquema: Rol de cada columna: 'respuesta', 'brazo', 'estratos' (lista),
                'covariables' (lista) y 'one_hot' (lista de covariables categóricas)
            pi: Proporciones de asignación; si falta, asignación igual entre los brazos vistos

        Returns:
            EnsayoClinico con los estratos cruzados en un único nivel conjunto

        Raises:
            FileNotFoundError: Si el archivo no existe
            ErrorDatos: Si falta una columna, una celda no se puede interpretar,
                un brazo está fuera de rango o el archivo no tiene filas
        """
        if not os.path.exists(ruta_archivo):
            raise FileNotFoundError(f"El archivo {ruta_archivo} no existe")

        esquema = ManejadorArchivos._validar_esquema(esquema)
        try:
            tabla = pd.read_csv(ruta_archivo, dtype=str, keep_default_na=False,
                                encoding="utf-8")
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise ErrorDatos(f"No se pudo leer el CSV {ruta_archivo}: {e}")

        requeridas = ([esquema["respuesta"], esquema["brazo"]] + esquema["estratos"]
                      + esquema["covariables"] + esquema["one_hot"])
        faltantes = [columna for columna in requeridas if columna not in tabla.columns]
        if faltantes:
            raise ErrorDatos(f"Columnas no encontradas en el CSV: {faltantes}")
        if len(tabla) == 0:
            raise ErrorDatos(f"El archivo {ruta_archivo} no tiene filas de datos")

        for columna in requeridas:
            for fila, valor in enumerate(tabla[columna]):
                if valor.strip() == "":
                    raise ErrorDatos(f"Celda vacía en la fila {fila + 1}, columna '{columna}'")

        respuesta = ManejadorArchivos._columna_numerica(tabla, esquema["respuesta"])
        brazo = ManejadorArchivos._columna_brazo(tabla, esquema["brazo"], pi)
        k = int(brazo.max()) if pi is None else len(pi)
        if pi is None:
            pi = [1.0 / k] * k

        numericas = [ManejadorArchivos._columna_numerica(tabla, columna)
                     for columna in esquema["covariables"]]
        nombres = list(esquema["covariables"])
        if esquema["one_hot"]:
            categoricas = pd.get_dummies(tabla[esquema["one_hot"]].apply(lambda c: c.str.strip()),
                                         prefix_sep="=", drop_first=True, dtype=float)
            for columna in categoricas.columns:
                numericas.append(categoricas[columna].to_numpy())
                nombres.append(str(columna))
        covariables = (np.column_stack(numericas) if numericas
                       else np.zeros((len(tabla), 0)))

        if esquema["estratos"]:
            valores = tabla[esquema["estratos"]].apply(lambda c: c.str.strip()).to_numpy(dtype=object)
            estratos, margenes, niveles = codificar_estratos(valores)
            nombres_margenes = list(esquema["estratos"])
        else:
            # sin estratificación: un único estrato que se re-emite como columna constante
            estratos = np.zeros(len(tabla), dtype=int)
            margenes, niveles, nombres_margenes = estratos.reshape(-1, 1), [["1"]], ["estrato"]

        return EnsayoClinico(brazo - 1, estratos, covariables, respuesta, pi,
                             nombres_covariables=nombres, margenes=margenes,
                             nombres_margenes=nombres_margenes, niveles_margenes=niveles)

    @staticmethod
    def escribir_csv(ensayo: EnsayoClinico, ruta_archivo: str,
                     nombre_brazo: str = "brazo", nombre_respuesta: str = "respuesta") -> Dict:
        """
        Escribe la re-emisión canónica de un ensayo

        Columnas en orden: brazo (1-based), factores de estratificación con sus
        etiquetas originales, covariables ya codificadas y respuesta. Leer el
        archivo con el esquema devuelto y volver a escribirlo produce los mismos bytes.

        Args:
            ensayo: Ensayo a escribir
            ruta_archivo: Ruta de destino

        Returns:
            Esquema con el que se debe leer el archivo emitido
        """
        ManejadorArchivos._crear_directorio(ruta_archivo)
        columnas = {nombre_brazo: ensayo.brazo + 1}
        for j, nombre in enumerate(ensayo.nombres_margenes):
            etiquetas = np.asarray(ensayo.niveles_margenes[j], dtype=object)
            columnas[nombre] = etiquetas[ensayo.margenes[:, j]]
        for j, nombre in enumerate(ensayo.nombres_covariables):
            columnas[nombre] = ensayo.covariables[:, j]
        columnas[nombre_respuesta] = ensayo.respuesta

        tabla = pd.DataFrame(columnas)
        try:
            tabla.to_csv(ruta_archivo, index=False, lineterminator="\n", encoding="utf-8")
        except OSError as e:
            raise OSError(f"Error al escribir archivo {ruta_archivo}: {e}")

        return {
            "respuesta": nombre_respuesta,
            "brazo": nombre_brazo,
            "estratos": list(ensayo.nombres_margenes),
            "covariables": list(ensayo.nombres_covariables),
            "one_hot": [],
        }

    @staticmethod
    def leer_json(ruta_archivo: str) -> Dict:
        """
        Lee un archivo de configuración JSON

        Raises:
            FileNotFoundError: Si el archivo no existe
            ErrorConfiguracion: Si el contenido no es un objeto JSON válido
        """
        if not os.path.exists(ruta_archivo):
            raise FileNotFoundError(f"El archivo {ruta_archivo} no existe")
        try:
            with open(ruta_archivo, "r", encoding="utf-8") as archivo:
                data = json.load(archivo)
        except json.JSONDecodeError as e:
            raise ErrorConfiguracion(f"Error al parsear JSON de {ruta_archivo}: {e}")
        if not isinstance(data, dict):
            raise ErrorConfiguracion("La configuración debe ser un objeto JSON")
        return data

    @staticmethod
    def escribir_json(data: Dict, ruta_archivo: str) -> None:
        """
        Escribe un reporte JSON a precisión completa

        Los valores no finitos se escriben como null.

        Raises:
            OSError: Si hay problemas de escritura del archivo
        """
        ManejadorArchivos._crear_directorio(ruta_archivo)
        try:
            with open(ruta_archivo, "w", encoding="utf-8", newline="\n") as archivo:
                json.dump(ManejadorArchivos.a_serializable(data), archivo,
                          indent=2, ensure_ascii=False, allow_nan=False)
                archivo.write("\n")
        except OSError as e:
            raise OSError(f"Error al escribir archivo {ruta_archivo}: {e}")

    @staticmethod
    def escribir_tabla(tabla: pd.DataFrame, ruta_archivo: str) -> None:
        """Escribe una tabla de resultados como CSV con fin de línea '\\n'"""
        ManejadorArchivos._crear_directorio(ruta_archivo)
        tabla.to_csv(ruta_archivo, index=False, lineterminator="\n", encoding="utf-8",
                     na_rep="NA")

    @staticmethod
    def escribir_texto(texto: str, ruta_archivo: str) -> None:
        ManejadorArchivos._crear_directorio(ruta_archivo)
        with open(ruta_archivo, "w", encoding="utf-8", newline="\n") as archivo:
            archivo.write(texto)

    @staticmethod
    def a_serializable(valor):
        """
        Convierte recursivamente tipos numpy y valores no finitos a tipos JSON

        Args:
            valor: Diccionario, lista o escalar

        Returns:
            Estructura equivalente con floats, ints, listas y None
        """
        if isinstance(valor, dict):
            return {str(clave): ManejadorArchivos.a_serializable(v) for clave, v in valor.items()}
        if isinstance(valor, (list, tuple)):
            return [ManejadorArchivos.a_serializable(v) for v in valor]
        if isinstance(valor, np.ndarray):
            return ManejadorArchivos.a_serializable(valor.tolist())
        if isinstance(valor, (bool, np.bool_)):
            return bool(valor)
        if isinstance(valor, (int, np.integer)):
            return int(valor)
        if isinstance(valor, (float, np.floating)):
            valor = float(valor)
            return valor if math.isfinite(valor) else None
        return valor

    @staticmethod
    def validar_archivo_csv(ruta_archivo: str, esquema: Dict) -> Dict:
        """
        Valida un archivo de ensayo sin detener la ejecución

        Args:
            ruta_archivo: Ruta al archivo a validar
            esquema: Rol de cada columna

        Returns:
            Diccionario con información de validación
        """
        resultado = {
            "es_valido": False,
            "errores": [],
            "advertencias": [],
            "estadisticas": {}
        }

        try:
            ensayo = ManejadorArchivos.leer_csv(ruta_archivo, esquema)
            resultado["estadisticas"] = ensayo.to_dict()
            if ensayo.num_estratos > ensayo.n / 2:
                resultado["advertencias"].append(
                    f"Hay {ensayo.num_estratos} estratos para {ensayo.n} pacientes")
            for a, conteo in enumerate(ensayo.n_por_brazo):
                if conteo < 2:
                    resultado["advertencias"].append(f"El brazo {a + 1} tiene {conteo} pacientes")
            resultado["es_valido"] = True

        except FileNotFoundError:
            resultado["errores"].append("Archivo no encontrado")
        except ErrorDatos as e:
            resultado["errores"].append(f"Datos inválidos: {e}")

        return resultado

    @staticmethod
    def _validar_esquema(esquema: Dict) -> Dict:
        if not isinstance(esquema, dict):
            raise ErrorDatos("El esquema de columnas debe ser un diccionario")
        for campo in ("respuesta", "brazo"):
            if not isinstance(esquema.get(campo), str):
                raise ErrorDatos(f"El esquema necesita exactamente una columna '{campo}'")
        desconocidos = set(esquema) - set(CAMPOS_ESQUEMA)
        if desconocidos:
            raise ErrorDatos(f"Campos desconocidos en el esquema: {sorted(desconocidos)}")
        normalizado = {"respuesta": esquema["respuesta"], "brazo": esquema["brazo"]}
        for campo in ("estratos", "covariables", "one_hot"):
            valor = esquema.get(campo, [])
            if not isinstance(valor, list) or not all(isinstance(v, str) for v in valor):
                raise ErrorDatos(f"El campo '{campo}' del esquema debe ser una lista de columnas")
            normalizado[campo] = list(valor)
        return normalizado

    @staticmethod
    def _columna_numerica(tabla: pd.DataFrame, columna: str) -> np.ndarray:
        valores = np.empty(len(tabla))
        for fila, texto in enumerate(tabla[columna]):
            try:
                valores[fila] = float(texto)
            except ValueError:
                raise ErrorDatos(f"Valor no numérico '{texto}' en la fila {fila + 1}, columna '{columna}'")
            if not math.isfinite(valores[fila]):
                raise ErrorDatos(f"Valor no finito '{texto}' en la fila {fila + 1}, columna '{columna}'")
        return valores

    @staticmethod
    def _columna_brazo(tabla: pd.DataFrame, columna: str,
                       pi: Optional[Sequence[float]]) -> np.ndarray:
        brazos = np.empty(len(tabla), dtype=int)
        for fila, texto in enumerate(tabla[columna]):
            try:
                valor = float(texto)
            except ValueError:
                raise ErrorDatos(f"Brazo no numérico '{texto}' en la fila {fila + 1}, columna '{columna}'")
            if not valor.is_integer() or valor < 1 or (pi is not None and valor > len(pi)):
                limite = "k" if pi is None else str(len(pi))
                raise ErrorDatos(f"Brazo fuera de rango 1..{limite} en la fila {fila + 1}, "
                                 f"columna '{columna}': {texto}")
            brazos[fila] = int(valor)
        return brazos

    @staticmethod
    def _crear_directorio(ruta_archivo: str) -> None:
        directorio = os.path.dirname(ruta_archivo)
        if directorio and not os.path.exists(directorio):
            os.makedirs(directorio)
