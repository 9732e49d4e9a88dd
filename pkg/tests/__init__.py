# Archivo vacío para hacer del directorio un paquete Python
