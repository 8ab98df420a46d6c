"""Dense layers, recurrent cells and windowed attention with exact gradients"""
