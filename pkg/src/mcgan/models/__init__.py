from .generator import (BackgroundEncoder, GenOutput, Generator, LEARNED,
                        Stage2Generator, SwitchOverride, SynthesisBlock)
from .discriminator import Discriminator, Scores

__all__ = ["BackgroundEncoder", "GenOutput", "Generator", "LEARNED",
           "Stage2Generator", "SwitchOverride", "SynthesisBlock",
           "Discriminator", "Scores"]
