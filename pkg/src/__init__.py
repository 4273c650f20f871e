# src package - cavity feedback simulator
