"""
cria — кросс-видовое предобучение энкодера ЭЭГ
"""
