"""
Tests module - Suite de tests de metacot.

Contiene tests unitarios por módulo y corridas de aceptación
(marcadas ``slow``).
"""
