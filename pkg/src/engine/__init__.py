# Engine package - trajectory simulation, ensembles and the Fock-basis oracle
