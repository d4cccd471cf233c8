"""Expected (kernel, output shape) rows for every sub-network at full size.

Shapes are (height, width, channels); fully-connected rows have no kernel.
"""

K3, K4, K1 = (3, 3), (4, 4), (1, 1)

EXPECTED_TABLES = {
    "CAE": {
        "encoder": [
            (K3, (512, 512, 16)), (K4, (256, 256, 32)), (K3, (256, 256, 32)), (K4, (128, 128, 64)),
            (K3, (128, 128, 64)), (K4, (64, 64, 128)), (K3, (64, 64, 128)), (K4, (32, 32, 256)),
            (K3, (32, 32, 256)), (K4, (16, 16, 512)),
        ],
        "decoder": [
            (K4, (32, 32, 256)), (K4, (64, 64, 128)), (K4, (128, 128, 64)), (K4, (256, 256, 32)),
            (K4, (512, 512, 16)), (K3, (512, 512, 1)),
        ],
    },
    "VAE": {
        "encoder": [
            (K4, (255, 255, 8)), (K4, (126, 126, 16)), (K4, (62, 62, 32)), (K4, (30, 30, 64)),
            (K4, (14, 14, 128)), (K4, (6, 6, 256)), (K4, (2, 2, 512)),
        ],
        "bottleneck": [
            (None, (2048,)), (None, (1024,)), (None, (1024,)), (None, (1024,)), (None, (2048,)),
            (None, (2, 2, 512)),
        ],
        "decoder": [
            (K4, (6, 6, 256)), (K4, (14, 14, 128)), (K4, (30, 30, 64)), (K4, (62, 62, 32)),
            (K4, (126, 126, 16)), (K4, (254, 254, 8)), ((6, 6), (512, 512, 1)),
        ],
    },
    "DCGAN": {
        "generator": [
            (K4, (4, 4, 1024)), (K4, (8, 8, 512)), (K4, (16, 16, 256)), (K4, (32, 32, 128)),
            (K4, (64, 64, 64)), (K4, (128, 128, 32)), (K4, (256, 256, 16)), (K4, (512, 512, 1)),
        ],
        "discriminator": [
            (K4, (256, 256, 4)), (K4, (128, 128, 8)), (K4, (64, 64, 16)), (K4, (32, 32, 32)),
            (K4, (16, 16, 64)), (K4, (8, 8, 128)), (K4, (4, 4, 256)), (K4, (1, 1, 512)),
            (None, (1, 1, 528)), (None, (1,)),
        ],
    },
    "BiGAN": {
        "generator": [
            (K4, (4, 4, 1024)), (K4, (8, 8, 512)), (K4, (16, 16, 256)), (K4, (32, 32, 128)),
            (K4, (64, 64, 64)), (K4, (128, 128, 1)),
        ],
        "encoder": [
            (K4, (64, 64, 64)), (K4, (32, 32, 128)), (K4, (16, 16, 256)), (K4, (8, 8, 512)),
            (K4, (4, 4, 1024)), (K4, (1, 1, 200)),
        ],
        "disc_image": [
            (K4, (64, 64, 64)), (K4, (32, 32, 128)), (K4, (16, 16, 256)), (K4, (8, 8, 512)),
            (K4, (4, 4, 1024)), (K4, (1, 1, 1024)),
        ],
        "disc_code": [(K1, (1, 1, 512)), (K1, (1, 1, 512))],
        "disc_joint": [(K1, (1, 1, 1024)), (K1, (1, 1, 1024)), (K1, (1, 1, 1))],
    },
    "aGAN": {
        "generator": [
            (K4, (4, 4, 1024)), (K4, (8, 8, 512)), (K4, (16, 16, 256)), (K4, (32, 32, 128)),
            (K4, (64, 64, 64)), (K4, (128, 128, 1)),
        ],
        "encoder": [
            (K4, (64, 64, 64)), (K4, (32, 32, 128)), (K4, (16, 16, 256)), (K4, (8, 8, 512)),
            (K4, (4, 4, 1024)), (K4, (1, 1, 200)),
        ],
        "discriminator": [
            (K4, (64, 64, 64)), (K4, (32, 32, 128)), (K4, (16, 16, 256)), (K4, (8, 8, 512)),
            (K4, (4, 4, 1024)), (None, (4, 4, 1028)), (K4, (1, 1, 1)),
        ],
        "code_discriminator": [(K1, (1, 1, 100)), (K1, (1, 1, 50)), (K1, (1, 1, 25)), (K1, (1, 1, 1))],
    },
}

# rows followed by a self-attention layer, as (sub-network, row index)
ATTENTION_ROWS = {
    "BiGAN": {("generator", 3), ("generator", 4), ("encoder", 3), ("encoder", 4),
              ("disc_image", 3), ("disc_image", 4)},
    "aGAN": {("generator", 3), ("generator", 4), ("encoder", 3), ("encoder", 4),
             ("discriminator", 3), ("discriminator", 4)},
}
