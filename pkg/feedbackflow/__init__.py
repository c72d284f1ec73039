# Feedback-controlled quasilinear diffusion driven towards obstacle sets.
