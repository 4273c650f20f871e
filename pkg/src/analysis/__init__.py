# Analysis package - estimators and power-law scaling
