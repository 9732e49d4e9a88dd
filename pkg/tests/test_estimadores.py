"""
Tests para los estimadores puntuales de las medias por brazo
"""
import unittest
import sys
import os

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from datos import Contraste, EnsayoClinico
from errores import ErrorEstimacion
from estimadores import (PlanPliegues, aipw, aipw_cruzado, calibracion_conjunta, calibrar_lineal,
                         estimador_cruzado, evaluar_contraste, g_computacion, media_muestral)
from modelos_trabajo import EspecificacionModelo, ajustar


def ensayo_continuo(n=600, k=3, semilla=17, desplazamiento=0.0):
    rng = np.random.default_rng(semilla)
    x = rng.normal(size=(n, 2))
    brazo = rng.integers(k, size=n)
    z = (x[:, 0] > 0).astype(int)
    y = 1.0 + 0.5 * brazo + x @ [1.0, -0.7] + 0.4 * brazo * x[:, 1] + rng.normal(scale=0.5, size=n)
    return EnsayoClinico(brazo, z, x, y + desplazamiento, np.full(k, 1.0 / k))


class TestEstimadores(unittest.TestCase):
    """Tests para media, g-computación, AIPW, ajuste cruzado y calibraciones"""

    def setUp(self):
        self.ensayo = ensayo_continuo()

    def test_aipw_cero_es_media(self):
        """AIPW con predicciones nulas es la media muestral"""
        print("\n=== Test AIPW con modelo cero ===")
        media = media_muestral(self.ensayo)
        cero = aipw(self.ensayo, ajustar(EspecificacionModelo("cero"), self.ensayo))
        self.assertTrue(np.allclose(cero.theta, media.theta, atol=1e-14, rtol=0))
        self.assertEqual(media.metodo, "media")
        print(f"   θ̂ = {np.round(media.theta, 4).tolist()}")
        print("✅ AIPW(0) = media muestral")

    def test_aipw_cero_muchos_ensayos(self):
        """AIPW(0) = media en 100 ensayos aleatorios"""
        print("\n=== Test AIPW(0) en 100 ensayos ===")
        rng = np.random.default_rng(100)
        for _ in range(100):
            n = int(rng.integers(20, 200))
            k = int(rng.integers(2, 5))
            brazo = np.r_[np.arange(k), rng.integers(k, size=n - k)]
            ensayo = EnsayoClinico(brazo, np.zeros(n), rng.normal(size=(n, 1)),
                                   rng.standard_t(3, size=n) * 10, np.full(k, 1.0 / k))
            self.assertTrue(np.allclose(aipw(ensayo, np.zeros((n, k))).theta,
                                        media_muestral(ensayo).theta, atol=1e-12, rtol=0))
        print("✅ Igualdad exacta en 100 ensayos")

    def test_aipw_invariante_a_constantes(self):
        """Sumar una constante a μ̂ₐ no cambia AIPW; sí cambia g-computación"""
        print("\n=== Test AIPW con μ̂ desplazado ===")
        mu = ajustar(EspecificacionModelo("lineal", True), self.ensayo).predecir_ensayo(self.ensayo)
        desplazado = mu + np.array([0.3, -1.2, 5.0])
        self.assertTrue(np.allclose(aipw(self.ensayo, desplazado).theta, aipw(self.ensayo, mu).theta,
                                    atol=1e-12, rtol=0))
        # la brecha de insesgadez pasa a ser -c y g-computación se aleja de AIPW en c
        diferencia = g_computacion(self.ensayo, desplazado).theta - aipw(self.ensayo, desplazado).theta
        self.assertTrue(np.allclose(diferencia, [0.3, -1.2, 5.0], atol=1e-10))
        print("✅ AIPW invariante, g-computación no")

    def test_gcomp_igual_aipw_canonico(self):
        """Con GLM canónico e intercepto por brazo, g-computación y AIPW coinciden"""
        print("\n=== Test g-computación vs AIPW ===")
        ajuste = ajustar(EspecificacionModelo("lineal", True), self.ensayo)
        g = g_computacion(self.ensayo, ajuste)
        a = aipw(self.ensayo, ajuste)
        self.assertTrue(np.allclose(g.theta, a.theta, atol=1e-10, rtol=0))

        rng = np.random.default_rng(4)
        binario = self.ensayo.con_respuesta((rng.random(self.ensayo.n) < 0.4).astype(float))
        ajuste = ajustar(EspecificacionModelo("logistico", True), binario)
        self.assertTrue(np.allclose(g_computacion(binario, ajuste).theta, aipw(binario, ajuste).theta,
                                    atol=1e-8, rtol=0))
        print("✅ g-computación = AIPW para modelos canónicos")

    def test_cruzado_con_ajustes_iguales_es_aipw(self):
        """Con el mismo ajuste en todos los pliegues, pliegues iguales y π̂ global, cruzado = AIPW"""
        print("\n=== Test cruzado degenerado ===")
        especificacion = EspecificacionModelo("lineal", False)
        ajuste = ajustar(especificacion, self.ensayo)
        plan = PlanPliegues(np.arange(self.ensayo.n) % 5)
        cruzado = aipw_cruzado(self.ensayo, especificacion, plan, modo_pi="global", ajustes=[ajuste] * 5)
        self.assertTrue(np.allclose(cruzado.theta, aipw(self.ensayo, ajuste).theta, atol=1e-12, rtol=0))
        self.assertTrue(cruzado.es_cruzado)
        self.assertTrue(np.allclose(cruzado.pi_pliegue, self.ensayo.n_por_brazo / self.ensayo.n))
        print("✅ Ajuste cruzado degenerado = AIPW")

    def test_plan_pliegues(self):
        """Tamaños de pliegue que difieren a lo sumo en 1"""
        print("\n=== Test plan de pliegues ===")
        plan = PlanPliegues.crear(103, 5, np.random.default_rng(0))
        self.assertEqual(plan.num_pliegues, 5)
        self.assertLessEqual(plan.tamanos.max() - plan.tamanos.min(), 1)
        self.assertEqual(plan.tamanos.sum(), 103)
        self.assertEqual(np.intersect1d(plan.filas(0), plan.complemento(0)).size, 0)
        otro = PlanPliegues.crear(103, 5, np.random.default_rng(0))
        self.assertEqual(plan.asignacion.tolist(), otro.asignacion.tolist())
        with self.assertRaises(ErrorEstimacion):
            PlanPliegues.crear(10, 1, np.random.default_rng(0))
        with self.assertRaises(ErrorEstimacion):
            PlanPliegues.crear(3, 5, np.random.default_rng(0))
        with self.assertRaises(ErrorEstimacion):
            PlanPliegues([0, 0, 2, 2])
        print("✅ Plan de pliegues correcto")

    def test_brazo_vacio_en_pliegue(self):
        print("\n=== Test brazo vacío en un pliegue ===")
        ensayo = EnsayoClinico([0, 1, 0, 0, 1, 0], [0] * 6, np.zeros((6, 1)), [1.0, 2, 3, 4, 5, 6], [0.5, 0.5])
        plan = PlanPliegues([0, 0, 1, 1, 0, 1])
        with self.assertRaisesRegex(ErrorEstimacion, "pliegue 2"):
            estimador_cruzado(ensayo, np.zeros((6, 2)), plan)
        print("✅ Brazo vacío en pliegue detectado")

    def test_invariancia_desplazamiento(self):
        """Sumar una constante a y desplaza θ̂ en la misma constante"""
        print("\n=== Test invariancia por desplazamiento ===")
        desplazado = ensayo_continuo(desplazamiento=7.5)
        especificacion = EspecificacionModelo("lineal", True)
        for nombre, estimar in (
                ("aipw", lambda e: aipw(e, ajustar(especificacion, e))),
                ("cruzado", lambda e: aipw_cruzado(e, especificacion,
                                                   PlanPliegues.crear(e.n, 4, np.random.default_rng(9)))),
                ("conjunta", lambda e: calibracion_conjunta(e, ajustar(especificacion, e)))):
            original = estimar(self.ensayo).theta
            movido = estimar(desplazado).theta
            self.assertTrue(np.allclose(movido, original + 7.5, atol=1e-9, rtol=0), nombre)
            print(f"   {nombre}: ok")
        print("✅ Estimadores equivariantes")

    def test_calibracion_conjunta_celdas(self):
        """μ̂* es insesgado en cada celda (estrato, brazo)"""
        print("\n=== Test calibración conjunta ===")
        ajuste = ajustar(EspecificacionModelo("lineal", False), self.ensayo)
        estimacion = calibracion_conjunta(self.ensayo, ajuste)
        self.assertEqual(estimacion.metodo, "aipw+conjunta")
        residuo = self.ensayo.respuesta[:, None] - estimacion.mu
        for z in range(self.ensayo.num_estratos):
            for a in range(self.ensayo.k):
                celda = (self.ensayo.estratos == z) & (self.ensayo.brazo == a)
                self.assertAlmostEqual(residuo[celda, a].mean(), 0.0, places=10)
        registro = estimacion.calibracion
        self.assertEqual(registro["gamma"].shape, (3, 1 + 1 + 3))
        self.assertEqual(registro["Gamma"].shape, (1 + 3, 3))
        self.assertEqual(registro["nombres"], ["(intercepto)", "estrato_2", "mu_1", "mu_2", "mu_3"])
        print("✅ Calibración conjunta insesgada por celda")

    def test_calibracion_conjunta_columnas_colineales(self):
        """Las columnas de μ̂ colineales se descartan con una advertencia visible"""
        print("\n=== Test calibración conjunta con μ̂ colineal ===")
        x = self.ensayo.covariables[:, 1]
        mu = np.column_stack([x, x, 2.0 * x])
        with self.assertLogs(level="WARNING") as registro_logs:
            estimacion = calibracion_conjunta(self.ensayo, mu)
        self.assertEqual(len(registro_logs.records), self.ensayo.k)
        self.assertIn("mu_", registro_logs.output[0])
        for descartadas in estimacion.calibracion["descartadas"]:
            self.assertEqual(len(descartadas), 2)
        self.assertTrue(np.all(np.isfinite(estimacion.theta)))
        print("✅ Columnas descartadas y advertidas")

    def test_calibracion_conjunta_cruzada(self):
        print("\n=== Test calibración conjunta con ajuste cruzado ===")
        plan = PlanPliegues.crear(self.ensayo.n, 5, np.random.default_rng(2))
        cruzado = aipw_cruzado(self.ensayo, EspecificacionModelo("lineal"), plan)
        conjunta = calibracion_conjunta(self.ensayo, cruzado)
        self.assertEqual(conjunta.metodo, "cruzado+conjunta")
        self.assertTrue(conjunta.es_cruzado)
        self.assertTrue(np.all(np.abs(conjunta.theta - cruzado.theta) < 0.2))
        print("✅ Calibración conjunta cruzada correcta")

    def test_calibracion_conjunta_celda_vacia(self):
        print("\n=== Test calibración conjunta con celda vacía ===")
        ensayo = EnsayoClinico([0, 1, 0, 0], [0, 0, 1, 1], np.arange(4.0), [1.0, 2, 3, 4], [0.5, 0.5])
        with self.assertRaises(ErrorEstimacion):
            calibracion_conjunta(ensayo, np.zeros((4, 2)))
        print("✅ Celda vacía detectada")

    def test_calibracion_lineal_degenerada(self):
        """Con predicciones constantes todas las columnas se podan y se predice 0"""
        print("\n=== Test calibración lineal degenerada ===")
        calibrado = calibrar_lineal(self.ensayo, ajustar(EspecificacionModelo("cero"), self.ensayo))
        self.assertTrue(all(calibrado.degenerado))
        self.assertTrue(np.all(calibrado.predecir_ensayo(self.ensayo) == 0.0))
        self.assertTrue(np.allclose(aipw(self.ensayo, calibrado).theta, media_muestral(self.ensayo).theta))
        print("✅ Calibración lineal degenerada")

    def test_calibracion_lineal_reduce_varianza(self):
        """La calibración lineal no empeora la predicción dentro de cada brazo"""
        print("\n=== Test calibración lineal ===")
        ajuste = ajustar(EspecificacionModelo("lineal", False, covariables=["x1"]), self.ensayo)
        calibrado = calibrar_lineal(self.ensayo, ajuste)
        antes = ajuste.predecir_ensayo(self.ensayo)
        despues = calibrado.predecir_ensayo(self.ensayo)
        for a in range(self.ensayo.k):
            en_brazo = self.ensayo.brazo == a
            y = self.ensayo.respuesta[en_brazo]
            self.assertLessEqual(np.var(y - despues[en_brazo, a]), np.var(y - antes[en_brazo, a]) + 1e-10)
        print("✅ Calibración lineal correcta")

    def test_predicciones_incompatibles(self):
        print("\n=== Test predicciones incompatibles ===")
        with self.assertRaises(ErrorEstimacion):
            aipw(self.ensayo, np.zeros((3, 3)))
        malas = np.zeros((self.ensayo.n, 3))
        malas[0, 0] = np.nan
        with self.assertRaises(ErrorEstimacion):
            g_computacion(self.ensayo, malas)
        print("✅ Predicciones inválidas rechazadas")

    def test_evaluar_contraste(self):
        print("\n=== Test evaluar_contraste ===")
        estimacion = media_muestral(self.ensayo)
        valor = evaluar_contraste(estimacion, Contraste.diferencia(1, 3))
        self.assertAlmostEqual(valor, estimacion.theta[2] - estimacion.theta[0])
        self.assertIn("theta", estimacion.to_dict())
        print("✅ Contraste evaluado")


def ejecutar_tests():
    print("🧪 EJECUTANDO TESTS DE ESTIMADORES")
    print("=" * 50)
    suite = unittest.TestLoader().loadTestsFromTestCase(TestEstimadores)
    resultado = unittest.TextTestRunner(verbosity=2).run(suite)
    return resultado.wasSuccessful()


if __name__ == "__main__":
    ejecutar_tests()
