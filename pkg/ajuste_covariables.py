#!/usr/bin/env python3
"""
Línea de comandos: analiza un ensayo en CSV o ejecuta un escenario de simulación

Uso:
    python ajuste_covariables.py --config ejemplos/analisis_bloques.json
    python ajuste_covariables.py --config ejemplos/caso1_simple.json --threads 4 --out resultados
"""
import argparse
import json
import logging
import os
import sys

# Agregar el directorio src al path para importar módulos locales
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

from analisis import (CODIGO_CONFIGURACION, AnalizadorEnsayo,  # noqa: E402
                      ConfiguracionEjecucion)
from errores import ErrorConfiguracion  # noqa: E402
from manejador_archivos import ManejadorArchivos  # noqa: E402


def crear_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Estimación ajustada por covariables en ensayos con aleatorización adaptativa")
    parser.add_argument("--config", required=True, help="Archivo JSON de configuración")
    parser.add_argument("--seed", type=int, default=None, help="Semilla maestra (reemplaza la de la configuración)")
    parser.add_argument("--threads", type=int, default=None,
                        help="Procesos para la simulación (por defecto AJUSTE_HILOS o 1)")
    parser.add_argument("--out", default=None, help="Directorio de salida (reemplaza 'salida')")
    parser.add_argument("--verbose", action="store_true", help="Muestra mensajes de depuración")
    return parser


def cargar_configuracion(args: argparse.Namespace) -> ConfiguracionEjecucion:
    """
    Lee la configuración y aplica las opciones de la línea de comandos

    Raises:
        ErrorConfiguracion: si el archivo o algún valor es inválido
    """
    try:
        data = ManejadorArchivos.leer_json(args.config)
    except FileNotFoundError as e:
        raise ErrorConfiguracion(str(e))
    if args.seed is not None:
        data["semilla"] = args.seed
    if args.threads is not None:
        data["hilos"] = args.threads
    configuracion = ConfiguracionEjecucion.from_dict(data, os.path.dirname(os.path.abspath(args.config)))
    if args.out is not None:
        configuracion.salida = args.out
    return configuracion


def reportar_error(codigo: int, errores) -> None:
    json.dump({"exito": False, "codigo": codigo, "errores": list(errores)},
              sys.stderr, ensure_ascii=False)
    sys.stderr.write("\n")


def main(argv=None) -> int:
    """Función principal; devuelve el código de salida"""
    args = crear_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    try:
        configuracion = cargar_configuracion(args)
    except ErrorConfiguracion as e:
        reportar_error(CODIGO_CONFIGURACION, [str(e)])
        return CODIGO_CONFIGURACION

    analizador = AnalizadorEnsayo()
    resultado = analizador.procesar_configuracion(configuracion)

    for ruta in resultado["archivos"]:
        if ruta.endswith(".txt"):
            with open(ruta, encoding="utf-8") as archivo:
                print(archivo.read(), end="")
    if resultado["archivos"]:
        print(f"Reportes escritos en {configuracion.salida}")
    if not resultado["exito"]:
        reportar_error(resultado["codigo"], resultado["errores"])
    return resultado["codigo"]


if __name__ == "__main__":
    sys.exit(main())
