"""
What the teachers look like
===========================

The unlearning client asks the frozen global model for its output on each
local example and edits it before distilling.  Here we print the edited
targets for one example whose true class is 0.
"""

import numpy as np

from fedquit import TeacherVariant, softmax, teacher_targets

np.set_printoptions(precision=4, suppress=True)

# logits of the global model on one example; it is confident in class 0
z = np.array([[2.0, 1.0, 0.0]])
y = [0]
print("global model      ", softmax(z)[0])

###############################################################################
# Overwriting the true-class logit keeps the ranking of the other classes
# and sends most of the mass to class 1.

for variant in (TeacherVariant.logits_fixed(0.0), TeacherVariant.logits_min(),
                TeacherVariant.softmax_fixed(1 / 3), TeacherVariant.softmax_fixed(0.0),
                TeacherVariant.incompetent()):
    print(f"{variant.label:18s}", teacher_targets(variant, z, y)[0])

###############################################################################
# When the model is already unsure, moving mass can push a class below zero.
# Those entries are clipped and the rest renormalized.

g = np.array([[0.1, 0.8, 0.1]])
print("clipped softmax   ", teacher_targets(TeacherVariant.softmax_fixed(1 / 3),
                                            np.log(g), y)[0])
