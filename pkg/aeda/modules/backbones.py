import torch
from torch import nn
from torchvision.models import vgg16
from einops import rearrange


class FeatureExtractor(nn.Module):
    """Base for extractors f: image (N x 3 x H x W) -> feature vector (N x D)."""

    def __init__(self, feature_dim):
        super().__init__()
        self.feature_dim = feature_dim


class TinyCNN(FeatureExtractor):
    """One conv and one dense layer; small enough for finite-difference checks."""

    def __init__(self, config):
        super().__init__(config.feature_dim)
        channels = config.tiny.channels
        pooled = config.tiny.pooled_size

        self.conv = nn.Conv2d(config.in_channels, channels, kernel_size=3, padding=1)
        self.pool = nn.AdaptiveAvgPool2d((pooled, pooled))
        self.fc = nn.Linear(channels * pooled * pooled, config.feature_dim)

    def forward(self, x):
        x = torch.tanh(self.conv(x))
        x = self.pool(x)
        x = rearrange(x, "b c h w -> b (c h w)")
        return torch.tanh(self.fc(x))


class SmallCNN(FeatureExtractor):
    def __init__(self, config):
        super().__init__(config.feature_dim)
        channels = list(config.small_cnn.channels)

        blocks = []
        in_channels = config.in_channels
        for out_channels in channels:
            blocks.append(self.conv_block(in_channels, out_channels, kernel_size=3, padding=1))
            in_channels = out_channels
        self.conv_layers = nn.Sequential(*blocks)

        self.adaptive_pool = nn.AdaptiveAvgPool2d((1, 1))
        self.fc = nn.Linear(in_channels, config.feature_dim)
        self.relu = nn.ReLU()

    def conv_block(self, in_channels, out_channels, **kwargs):
        return nn.Sequential(
            nn.Conv2d(in_channels, out_channels, **kwargs),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(),
            nn.MaxPool2d(2),
        )

    def forward(self, x):
        x = self.conv_layers(x)
        x = self.adaptive_pool(x)
        x = rearrange(x, "b c 1 1 -> b c")
        return self.relu(self.fc(x))


class VGG16Extractor(FeatureExtractor):
    """VGG-16 convolutional trunk (randomly initialised) with a projection to D."""

    def __init__(self, config):
        super().__init__(config.feature_dim)
        self.features = vgg16(pretrained=False).features
        if config.in_channels != 3:
            self.features[0] = nn.Conv2d(config.in_channels, 64, kernel_size=3, padding=1)
        self.adaptive_pool = nn.AdaptiveAvgPool2d((1, 1))
        self.fc = nn.Linear(512, config.feature_dim)
        self.relu = nn.ReLU()

    def forward(self, x):
        x = self.features(x)
        x = self.adaptive_pool(x)
        x = rearrange(x, "b c 1 1 -> b c")
        return self.relu(self.fc(x))


BACKBONES = {
    "tiny": TinyCNN,
    "small_cnn": SmallCNN,
    "vgg16": VGG16Extractor,
}


def build_extractor(model_config):
    backbone = model_config.backbone
    if backbone not in BACKBONES:
        raise ValueError("{} backbone is not supported.".format(backbone))
    return BACKBONES[backbone](model_config)
