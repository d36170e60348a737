from .config import Partition, StageSpec, TrainConfig, default_config, multires_stages, segregated_stages
from .gradcheck import GradCheckResult, grad_check
from .images import ProceduralImage, corpus, image_stream
from .student import HeadSpec, Student, StudentConfig, student_forward
from .teachers import Teacher, TeacherSpec, default_teachers
from .train import LossReport, Trainer, distillation_loss, epoch_terms, run_stage

__all__ = [
    "Partition", "StageSpec", "TrainConfig", "default_config", "multires_stages", "segregated_stages",
    "GradCheckResult", "grad_check", "ProceduralImage", "corpus", "image_stream",
    "HeadSpec", "Student", "StudentConfig", "student_forward",
    "Teacher", "TeacherSpec", "default_teachers",
    "LossReport", "Trainer", "distillation_loss", "epoch_terms", "run_stage",
]
