"""
Tests para los estimadores de varianza y el método delta
"""
import unittest
import sys
import os

import numpy as np
from scipy.stats import norm

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from aleatorizacion import EspecificacionEsquema, aleatorizar, omega_para
from datos import Contraste, EnsayoClinico, ResultadosPotenciales
from errores import ErrorEstimacion, RechazoVarianza
from estimadores import aipw, calibracion_conjunta, media_muestral
from modelos_trabajo import EspecificacionModelo, ajustar, calibrar_z
from varianza import (EstimacionCovarianza, componentes_varianza, correccion_aleatorizacion,
                      descomposicion_influencia, diagnostico_condiciones, error_estandar_delta,
                      vhat_ingenua, vhat_jc, vhat_robusta, vhat_universal)


def poblacion_estratificada(n, rng, efecto_estrato=3.0):
    """Respuestas con un efecto de estrato fuerte y dos brazos"""
    x = rng.normal(size=(n, 1))
    z = rng.integers(2, size=n)
    base = efecto_estrato * z + 0.8 * x[:, 0]
    potenciales = np.column_stack([base + rng.normal(size=n), base + 0.5 + rng.normal(size=n)])
    return ResultadosPotenciales(x, potenciales, [0.5, 0.5], z.reshape(-1, 1))


class TestVarianza(unittest.TestCase):
    """Tests para V̂ robusta, universal, ingenua y de calibración conjunta"""

    def setUp(self):
        self.rng = np.random.default_rng(31)
        self.poblacion = poblacion_estratificada(500, self.rng)
        self.simple = EspecificacionEsquema("simple", [0.5, 0.5])
        self.bloques = EspecificacionEsquema("bloques_permutados", [0.5, 0.5], tamano_bloque=4)

    def _ensayo(self, esquema):
        brazos = aleatorizar(esquema, self.poblacion.estratos, self.poblacion.margenes, self.rng)
        return self.poblacion.observar(brazos)

    def test_robusta_igual_universal_bajo_simple(self):
        """Con aleatorización simple la corrección es nula"""
        print("\n=== Test robusta = universal bajo aleatorización simple ===")
        ensayo = self._ensayo(self.simple)
        estimacion = aipw(ensayo, ajustar(EspecificacionModelo("lineal", False), ensayo))
        c = componentes_varianza(ensayo, estimacion)
        omega = omega_para(self.simple)
        self.assertTrue(np.array_equal(vhat_robusta(c, omega).V, vhat_universal(c).V))
        self.assertTrue(np.array_equal(vhat_ingenua(c).V, vhat_universal(c).V))
        print("✅ Corrección nula bajo aleatorización simple")

    def test_correccion_semidefinida_bajo_bloques(self):
        """Bajo bloques la corrección es PSD y la diagonal robusta no supera la universal"""
        print("\n=== Test corrección bajo bloques ===")
        ensayo = self._ensayo(self.bloques)
        estimacion = media_muestral(ensayo)
        c = componentes_varianza(ensayo, estimacion)
        correccion = correccion_aleatorizacion(c, omega_para(self.bloques))
        self.assertGreaterEqual(np.linalg.eigvalsh(correccion).min(), -1e-10)
        robusta = vhat_robusta(c, omega_para(self.bloques))
        self.assertTrue(np.all(np.diag(robusta.V) <= np.diag(vhat_universal(c).V) + 1e-12))
        print("✅ Corrección semidefinida positiva")

    def test_media_bajo_bloques_forma_cerrada(self):
        """Para la diferencia de medias la corrección es Σ_z p_z (d₁(z) + d₂(z))²"""
        print("\n=== Test forma cerrada de la media bajo bloques ===")
        ensayo = self._ensayo(self.bloques)
        estimacion = media_muestral(ensayo)
        c = componentes_varianza(ensayo, estimacion)
        robusta = vhat_robusta(c, omega_para(self.bloques))
        g = np.array([-1.0, 1.0])

        s2 = [np.var(ensayo.respuesta[ensayo.brazo == a], ddof=1) for a in range(2)]
        esperado = s2[0] / 0.5 + s2[1] / 0.5
        for z in range(2):
            p_z = np.mean(ensayo.estratos == z)
            d = [np.mean(ensayo.respuesta[(ensayo.estratos == z) & (ensayo.brazo == a)])
                 - estimacion.theta[a] for a in range(2)]
            esperado -= p_z * (d[0] + d[1]) ** 2
        self.assertAlmostEqual(float(g @ robusta.V @ g), esperado, places=10)
        print("✅ Forma cerrada verificada")

    def test_rechazo_sin_omega(self):
        """Pocock-Simon no tiene Ω(z) conocida"""
        print("\n=== Test rechazo de la varianza robusta ===")
        ensayo = self._ensayo(self.simple)
        c = componentes_varianza(ensayo, media_muestral(ensayo))
        minimizacion = omega_para(EspecificacionEsquema("pocock_simon", [0.5, 0.5]))
        with self.assertRaises(RechazoVarianza) as contexto:
            vhat_robusta(c, minimizacion)
        self.assertEqual(sorted(contexto.exception.alternativas), ["jc", "universal"])
        self.assertIn("alternativas", str(contexto.exception))
        print("✅ Rechazo con alternativas")

    def test_error_estandar_delta(self):
        """EE = sqrt(∇fᵀV̂∇f/n), con z y p normales"""
        print("\n=== Test método delta ===")
        ensayo = self._ensayo(self.simple)
        estimacion = aipw(ensayo, ajustar(EspecificacionModelo("lineal", False), ensayo))
        covarianza = vhat_universal(componentes_varianza(ensayo, estimacion))
        diferencia = error_estandar_delta(covarianza, estimacion, Contraste.diferencia(1, 2), ensayo.n)
        g = np.array([-1.0, 1.0])
        self.assertAlmostEqual(diferencia.ee, np.sqrt(g @ covarianza.V @ g / ensayo.n), places=12)
        self.assertAlmostEqual(diferencia.z, diferencia.estimacion / diferencia.ee, places=12)
        self.assertAlmostEqual(diferencia.p, 2 * norm.sf(abs(diferencia.z)), places=12)
        bajo, alto = diferencia.intervalo(0.95)
        self.assertAlmostEqual(alto - bajo, 2 * 1.959963984540054 * diferencia.ee, places=10)

        razon = error_estandar_delta(covarianza, estimacion, Contraste.razon_riesgo(1, 2), ensayo.n)
        gradiente = Contraste.razon_riesgo(1, 2).gradiente(estimacion.theta)
        self.assertAlmostEqual(razon.ee, np.sqrt(gradiente @ covarianza.V @ gradiente / ensayo.n), places=12)
        self.assertAlmostEqual(razon.z, (razon.estimacion - 1.0) / razon.ee, places=12)
        print(f"   diferencia {diferencia.estimacion:.4f} (EE {diferencia.ee:.4f})")
        print("✅ Método delta correcto")

    def test_forma_no_positiva(self):
        print("\n=== Test forma cuadrática no positiva ===")
        ensayo = self._ensayo(self.simple)
        estimacion = media_muestral(ensayo)
        with self.assertRaises(ErrorEstimacion):
            error_estandar_delta(EstimacionCovarianza(np.zeros((2, 2)), "universal"), estimacion,
                                 Contraste.diferencia(1, 2), ensayo.n)
        negativa = EstimacionCovarianza(np.array([[-1.0, 0.2], [0.0, 2.0]]), "robusta")
        self.assertTrue(negativa.no_psd)
        self.assertTrue(np.array_equal(negativa.V, negativa.V.T))
        print("✅ Casos degenerados detectados")

    def test_vhat_jc(self):
        """La varianza de calibración conjunta necesita la estimación conjunta"""
        print("\n=== Test vhat_jc ===")
        ensayo = self._ensayo(self.bloques)
        ajuste = ajustar(EspecificacionModelo("lineal", False), ensayo)
        with self.assertRaises(ErrorEstimacion):
            vhat_jc(ensayo, aipw(ensayo, ajuste))
        conjunta = calibracion_conjunta(ensayo, ajuste)
        jc = vhat_jc(ensayo, conjunta)
        self.assertEqual(jc.sabor, "jc")
        self.assertTrue(np.all(np.diag(jc.V) > 0))
        print("✅ vhat_jc correcta")

    def test_invariancias(self):
        """V̂ no cambia al permutar pacientes ni al sumar constantes a μ̂ₐ"""
        print("\n=== Test invariancias de V̂ ===")
        ensayo = self._ensayo(self.bloques)
        omega = omega_para(self.bloques)
        mu = ajustar(EspecificacionModelo("lineal", False), ensayo).predecir_ensayo(ensayo)
        base = aipw(ensayo, mu)
        c = componentes_varianza(ensayo, base)

        desplazado = aipw(ensayo, mu + np.array([2.0, -3.0]))
        c_desplazado = componentes_varianza(ensayo, desplazado)
        permutacion = np.random.default_rng(2).permutation(ensayo.n)
        permutado = ensayo.reordenar(permutacion)
        c_permutado = componentes_varianza(permutado, aipw(permutado, mu[permutacion]))

        for otro in (c_desplazado, c_permutado):
            self.assertTrue(np.allclose(vhat_robusta(otro, omega).V, vhat_robusta(c, omega).V, atol=1e-10))
            self.assertTrue(np.allclose(vhat_universal(otro).V, vhat_universal(c).V, atol=1e-10))
        print("✅ V̂ invariante")

    def test_ortogonalidad_conjunta(self):
        """Con calibración conjunta los residuos son ortogonales a μ̂* dentro de cada brazo"""
        print("\n=== Test ortogonalidad de la calibración conjunta ===")
        ensayo = self._ensayo(self.bloques)
        conjunta = calibracion_conjunta(ensayo, ajustar(EspecificacionModelo("lineal", False), ensayo))
        diagnostico = diagnostico_condiciones(ensayo, conjunta, omega_para(self.bloques))
        self.assertTrue(np.allclose(diagnostico["ortogonalidad"], 0.0, atol=1e-10))
        print("✅ Residuos ortogonales")

    def test_influencia_suma_cero(self):
        """Para AIPW la influencia estimada suma 0 en cada brazo"""
        print("\n=== Test función de influencia ===")
        ensayo = self._ensayo(self.simple)
        estimacion = aipw(ensayo, ajustar(EspecificacionModelo("lineal", False), ensayo))
        influencia = descomposicion_influencia(ensayo, estimacion)
        self.assertEqual(influencia.shape, (ensayo.n, 2))
        self.assertTrue(np.allclose(influencia.sum(axis=0), 0.0, atol=1e-8))
        print("✅ Influencia centrada")

    def test_diagnosticos(self):
        """Tras calibrar por estrato las medias de residuo por celda son iguales"""
        print("\n=== Test diagnósticos de condiciones ===")
        ensayo = self._ensayo(self.bloques)
        calibrado = calibrar_z(ajustar(EspecificacionModelo("lineal", False), ensayo), ensayo)
        estimacion = aipw(ensayo, calibrado)
        diagnostico = diagnostico_condiciones(ensayo, estimacion, omega_para(self.bloques))
        self.assertTrue(np.allclose(diagnostico["brechas_estrato"], 0.0, atol=1e-10))
        self.assertEqual(diagnostico["ganancia"].shape, (2, 2))
        sin_omega = diagnostico_condiciones(
            ensayo, estimacion, omega_para(EspecificacionEsquema("pocock_simon", [0.5, 0.5])))
        self.assertIsNone(sin_omega["ganancia"])
        print("✅ Diagnósticos correctos")

    def test_brazo_con_un_paciente(self):
        print("\n=== Test brazo con un paciente ===")
        ensayo = EnsayoClinico([0, 1, 1], [0, 0, 0], np.zeros((3, 1)), [1.0, 2, 3], [0.5, 0.5])
        with self.assertRaises(ErrorEstimacion):
            componentes_varianza(ensayo, media_muestral(ensayo))
        print("✅ Brazo chico detectado")

    def test_robusta_calibrada_por_monte_carlo(self):
        """Bajo bloques, la varianza robusta sigue a la varianza empírica y la ingenua la sobreestima"""
        print("\n=== Test Monte Carlo de la varianza bajo bloques ===")
        rng = np.random.default_rng(7)
        n, replicas = 400, 400
        contraste = Contraste.diferencia(1, 2)
        omega = omega_para(self.bloques)
        diferencias, robustas, ingenuas = [], [], []
        for _ in range(replicas):
            poblacion = poblacion_estratificada(n, rng)
            ensayo = poblacion.observar(aleatorizar(self.bloques, poblacion.estratos, None, rng))
            estimacion = media_muestral(ensayo)
            c = componentes_varianza(ensayo, estimacion)
            diferencias.append(contraste.evaluar(estimacion.theta))
            robustas.append(error_estandar_delta(vhat_robusta(c, omega), estimacion, contraste, n).ee ** 2)
            ingenuas.append(error_estandar_delta(vhat_ingenua(c), estimacion, contraste, n).ee ** 2)
        empirica = np.var(diferencias, ddof=1)
        print(f"   empírica {empirica:.5f}, robusta {np.mean(robustas):.5f}, ingenua {np.mean(ingenuas):.5f}")
        self.assertAlmostEqual(np.mean(robustas) / empirica, 1.0, delta=0.25)
        self.assertGreater(np.mean(ingenuas) / empirica, 1.5)
        print("✅ Varianza robusta calibrada")


def ejecutar_tests():
    print("🧪 EJECUTANDO TESTS DE VARIANZA")
    print("=" * 50)
    suite = unittest.TestLoader().loadTestsFromTestCase(TestVarianza)
    resultado = unittest.TextTestRunner(verbosity=2).run(suite)
    return resultado.wasSuccessful()


if __name__ == "__main__":
    ejecutar_tests()
