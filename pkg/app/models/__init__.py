from app.models.backbone import BackboneFPN, FeaturePyramid
from app.models.detector import DetectorOutput, SRTODDetector
from app.models.dgfe import DGFE
from app.models.recon_head import ReconstructionHead
