"""Small-scale adversarial-example detection toolkit.

A desk-scale VGG-style classifier with a gradient tape, white-box
perturbation generation with matched Gaussian controls, four class
activation map variants (Grad-CAM, Grad-CAM++, LayerCAM, NoiseCAM), and
two detectors: behavior-deviation modeling and NoiseCAM + DBSCAN.
"""

__version__ = "0.1.0"
