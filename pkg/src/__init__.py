# Paquete principal del ajuste por covariables en ensayos con aleatorización adaptativa
