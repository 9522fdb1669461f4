#pragma once

#include <opencv2/core.hpp>
#include <torch/types.h>

namespace edgeattack::detail {

// 8-bit HWC (RGB or gray) matrix to float [C,H,W] in [0,1].
torch::Tensor u8_to_tensor(const cv::Mat& u8);

}  // namespace edgeattack::detail
