"""
Tests para los modelos de trabajo por brazo
"""
import unittest
import sys
import os

import numpy as np
from scipy.special import expit, logit

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from datos import EnsayoClinico
from errores import ErrorEstimacion, ErrorModelo
from modelos_trabajo import (EspecificacionModelo, FamiliaBinomial, FamiliaPoisson,
                             ajustar, ajustar_binomial_negativa, brechas_prediccion,
                             calibrar_z, irls, podar_colineales,
                             verificar_insesgadez_prediccion)


def ensayo_binario(n=600, semilla=3, estratos=2):
    rng = np.random.default_rng(semilla)
    x = rng.uniform(-1, 1, size=(n, 2))
    brazo = rng.integers(2, size=n)
    z = rng.integers(estratos, size=n)
    p = expit(-0.2 + 0.8 * x[:, 0] - 0.5 * x[:, 1] + 0.6 * brazo + 0.3 * z)
    y = (rng.random(n) < p).astype(float)
    return EnsayoClinico(brazo, z, x, y, [0.5, 0.5], nombres_covariables=["edad", "peso"])


class TestModelosTrabajo(unittest.TestCase):
    """Tests para IRLS, binomial negativa, poda, bosque y calibración por estrato"""

    def test_irls_intercepto_forma_cerrada(self):
        """Con solo intercepto, β₀ = g(ȳ)"""
        print("\n=== Test IRLS solo intercepto ===")
        rng = np.random.default_rng(11)
        y = (rng.random(80) < 0.35).astype(float)
        X = np.ones((80, 1))
        resultado = irls(X, y, FamiliaBinomial())
        self.assertTrue(resultado.convergio)
        self.assertAlmostEqual(resultado.beta[0], logit(y.mean()), places=9)

        conteos = rng.poisson(3.2, size=80).astype(float)
        resultado = irls(X, conteos, FamiliaPoisson())
        self.assertAlmostEqual(resultado.beta[0], np.log(conteos.mean()), places=9)
        print("✅ Intercepto igual a g(ȳ)")

    def test_irls_desviacion_no_creciente(self):
        """La desviación nunca aumenta entre iteraciones"""
        print("\n=== Test desviación monótona ===")
        ensayo = ensayo_binario()
        X = np.hstack([np.ones((ensayo.n, 1)), ensayo.covariables])
        resultado = irls(X, np.asarray(ensayo.respuesta), FamiliaBinomial(), beta_inicial=[3.0, -4.0, 4.0])
        self.assertTrue(resultado.convergio)
        diferencias = np.diff(resultado.desviaciones)
        self.assertTrue(np.all(diferencias <= 1e-9))
        print(f"   {resultado.iteraciones} iteraciones, norma del gradiente {resultado.norma_gradiente:.2e}")
        print("✅ Desviación no creciente")

    def test_separacion(self):
        """Separación completa en un brazo se reporta como error de modelo"""
        print("\n=== Test separación ===")
        x = np.linspace(-3, 3, 40)
        brazo = np.tile([0, 1], 20)
        y = np.where(brazo == 0, (x > 0).astype(float), (np.arange(40) % 3 == 0).astype(float))
        ensayo = EnsayoClinico(brazo, np.zeros(40), x, y, [0.5, 0.5])
        with self.assertRaises(ErrorModelo):
            ajustar(EspecificacionModelo("logistico", False), ensayo)
        print("✅ Separación detectada")

    def test_poda_colineales(self):
        """Columnas duplicadas o constantes se descartan"""
        print("\n=== Test poda de colineales ===")
        rng = np.random.default_rng(5)
        x = rng.normal(size=50)
        z = rng.normal(size=50)
        conservados, descartados = podar_colineales(np.column_stack([x, 2 * x, z, np.ones(50)]))
        self.assertEqual(len(conservados), 2)
        self.assertIn(2, conservados)
        self.assertIn(3, descartados)
        self.assertEqual(podar_colineales(np.zeros((5, 0))), ([], []))
        print("✅ Poda correcta")

    def test_ajuste_con_columna_duplicada(self):
        """La columna duplicada queda con coeficiente 0 y se registra"""
        print("\n=== Test ajuste con columna duplicada ===")
        base = ensayo_binario()
        x = np.column_stack([base.covariables, base.covariables[:, 0]])
        ensayo = EnsayoClinico(base.brazo, base.estratos, x, base.respuesta, base.pi,
                               nombres_covariables=["edad", "peso", "edad_copia"])
        ajuste = ajustar(EspecificacionModelo("lineal", False), ensayo)
        for modelo in ajuste.modelos:
            self.assertEqual(len(modelo.info["descartadas"]), 1)
            self.assertEqual(int(np.sum(modelo.coeficientes == 0.0)), 1)
        print("✅ Columna duplicada descartada")

    def test_insesgadez_canonica(self):
        """GLM canónicos con intercepto por brazo son insesgados en predicción"""
        print("\n=== Test insesgadez de predicción ===")
        ensayo = ensayo_binario()
        for familia in ("lineal", "logistico"):
            ajuste = ajustar(EspecificacionModelo(familia), ensayo)
            resultado = verificar_insesgadez_prediccion(ajuste, ensayo, tolerancia=1e-7)
            self.assertTrue(np.all(resultado["insesgado"]), resultado["brecha"])
            print(f"   {familia}: brechas {resultado['brecha']}")
        print("✅ Modelos canónicos insesgados")

    def test_poisson_y_binomial_negativa(self):
        """Recupera coeficientes y dispersión de datos binomiales negativos"""
        print("\n=== Test binomial negativa ===")
        rng = np.random.default_rng(21)
        n = 3000
        x = rng.uniform(-1, 1, size=n)
        mu = np.exp(0.5 + 0.3 * x)
        r = 2.0
        y = rng.negative_binomial(r, r / (r + mu)).astype(float)
        X = np.column_stack([np.ones(n), x])
        resultado, alfa = ajustar_binomial_negativa(X, y)
        self.assertTrue(resultado.convergio)
        self.assertAlmostEqual(alfa, 1 / r, delta=0.15)
        self.assertTrue(np.allclose(resultado.beta, [0.5, 0.3], atol=0.1))

        # sin sobredispersión α queda cerca de 0
        y = rng.poisson(mu).astype(float)
        _, alfa = ajustar_binomial_negativa(X, y)
        self.assertLess(alfa, 0.1)
        print(f"   α estimado {alfa:.3g}")
        print("✅ Binomial negativa correcta")

    def test_validaciones_respuesta(self):
        """Familias incompatibles con la respuesta y brazos sin datos suficientes"""
        print("\n=== Test validaciones ===")
        ensayo = EnsayoClinico([0, 1, 0, 1], [0, 0, 0, 0], np.arange(4.0), [0.5, 1, -1, 2], [0.5, 0.5])
        with self.assertRaises(ErrorModelo):
            ajustar(EspecificacionModelo("logistico"), ensayo)
        with self.assertRaises(ErrorModelo):
            ajustar(EspecificacionModelo("poisson"), ensayo)
        with self.assertRaises(ErrorModelo):
            ajustar(EspecificacionModelo("lineal", covariables=["altura"]), ensayo)
        with self.assertRaises(ErrorModelo):
            EspecificacionModelo("spline")
        with self.assertRaises(ErrorModelo):
            EspecificacionModelo("bosque", parametros={"profundidad": 3})
        chico = EnsayoClinico([0, 1, 1, 1], [0, 0, 0, 0], np.arange(4.0), [1.0, 2, 3, 4], [0.5, 0.5])
        with self.assertRaisesRegex(ErrorModelo, "brazo 1"):
            ajustar(EspecificacionModelo("lineal"), chico)
        print("✅ Validaciones correctas")

    def test_indicadores_estrato(self):
        """Con estratos el diseño suma los indicadores sin el primer nivel"""
        print("\n=== Test diseño con estratos ===")
        ensayo = ensayo_binario(estratos=3)
        ajuste = ajustar(EspecificacionModelo("logistico", True), ensayo)
        self.assertEqual(ajuste.modelos[0].nombres,
                         ["(intercepto)", "edad", "peso", "estrato_2", "estrato_3"])
        self.assertEqual(str(ajuste.especificacion), "logistico+Z")
        with self.assertRaises(ErrorModelo):
            ajuste.predecir(ensayo.covariables)
        with self.assertRaises(ErrorModelo):
            ajuste.predecir(ensayo.covariables[:, :1], ensayo.estratos)
        print("✅ Diseño con estratos correcto")

    def test_bosque(self):
        """El bosque aprende un escalón y es reproducible con la misma semilla"""
        print("\n=== Test bosque ===")
        rng = np.random.default_rng(8)
        n = 400
        x = rng.uniform(0, 1, size=(n, 2))
        brazo = rng.integers(2, size=n)
        y = np.where(x[:, 0] > 0.5, 2.0, 0.0) + brazo + rng.normal(scale=0.1, size=n)
        ensayo = EnsayoClinico(brazo, np.zeros(n), x, y, [0.5, 0.5])
        especificacion = EspecificacionModelo("bosque", parametros={"num_arboles": 30})
        ajuste = ajustar(especificacion, ensayo, rng=np.random.default_rng(1))
        prueba = np.array([[0.2, 0.5], [0.8, 0.5]])
        prediccion = ajuste.predecir(prueba)
        self.assertTrue(np.allclose(prediccion, [[0.0, 1.0], [2.0, 3.0]], atol=0.3))
        otra = ajustar(especificacion, ensayo, rng=np.random.default_rng(1)).predecir(prueba)
        self.assertTrue(np.array_equal(prediccion, otra))
        self.assertFalse(especificacion.incluir_estratos)
        print("✅ Bosque correcto")

    def test_calibracion_z(self):
        """Después de calibrar, el residuo medio de cada celda es 0"""
        print("\n=== Test calibración por estrato ===")
        ensayo = ensayo_binario(estratos=3)
        for familia in ("cero", "logistico"):
            ajuste = calibrar_z(ajustar(EspecificacionModelo(familia, False), ensayo), ensayo)
            mu = ajuste.predecir_ensayo(ensayo)
            for z in range(3):
                en_estrato = ensayo.estratos == z
                self.assertTrue(np.allclose(brechas_prediccion(mu[en_estrato], _subensayo(ensayo, en_estrato)),
                                            0.0, atol=1e-12))
        print("✅ Calibración por estrato correcta")

    def test_calibracion_z_celda_vacia(self):
        print("\n=== Test celda vacía ===")
        ensayo = EnsayoClinico([0, 1, 0, 0], [0, 0, 1, 1], np.arange(4.0), [1.0, 2, 3, 4], [0.5, 0.5])
        with self.assertRaises(ErrorEstimacion):
            calibrar_z(ajustar(EspecificacionModelo("cero"), ensayo), ensayo)
        print("✅ Celda vacía detectada")

    def test_oraculo(self):
        """El oráculo devuelve la función verdadera sin ajustar"""
        print("\n=== Test oráculo ===")
        ensayo = ensayo_binario()
        especificacion = EspecificacionModelo("lineal").con_funcion_oraculo(
            lambda x: np.column_stack([x[:, 0], x[:, 1]]))
        ajuste = ajustar(especificacion, ensayo)
        self.assertTrue(np.array_equal(ajuste.predecir_ensayo(ensayo), ensayo.covariables))
        with self.assertRaises(ErrorModelo):
            ajustar(EspecificacionModelo("oraculo"), ensayo)
        print("✅ Oráculo correcto")


def _subensayo(ensayo, filas):
    return EnsayoClinico(ensayo.brazo[filas], np.zeros(int(np.sum(filas))), ensayo.covariables[filas],
                         ensayo.respuesta[filas], ensayo.pi)


def ejecutar_tests():
    print("🧪 EJECUTANDO TESTS DE MODELOS DE TRABAJO")
    print("=" * 50)
    suite = unittest.TestLoader().loadTestsFromTestCase(TestModelosTrabajo)
    resultado = unittest.TextTestRunner(verbosity=2).run(suite)
    return resultado.wasSuccessful()


if __name__ == "__main__":
    ejecutar_tests()
