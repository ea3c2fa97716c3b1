"""BART borrowing of external control data in clinical-trial analysis."""
