#pragma once

#include <stdexcept>
#include <vector>

namespace skipdet {

// axis-aligned box, normalized [0,1] corner coordinates
struct Box {
    float xmin = 0, ymin = 0, xmax = 0, ymax = 0;
    float area() const { return (xmax > xmin && ymax > ymin) ? (xmax - xmin) * (ymax - ymin) : 0.0f; }
};

struct GroundTruthBox {
    int class_id = 1;  // 1..K-1, 0 reserved for background
    Box box;
};

struct Detection {
    int class_id = 1;
    float score = 0;
    Box box;
};

// intersection over union; 0 for degenerate boxes
float iou(const Box& a, const Box& b);

}  // namespace skipdet
