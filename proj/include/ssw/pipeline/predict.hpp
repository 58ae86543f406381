#pragma once

// Binary mask and boundary-overlay export.

#include "ssw/pipeline/evaluate.hpp"

namespace ssw::train {

/// Binary H x W mask (1 = foreground) from a [1, H, W] probability map thresholded at 0.5.
inline std::vector<std::uint8_t> binarize(const Tensor<float>& prob) {
    std::vector<std::uint8_t> m(prob.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = prob[i] > 0.5f;
    return m;
}

/// mask XOR (4-neighbour erosion of mask); neighbours outside the image are ignored.
inline std::vector<std::uint8_t> boundary(const std::vector<std::uint8_t>& mask, std::size_t h, std::size_t w) {
    std::vector<std::uint8_t> out(mask.size());
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            const std::size_t p = i * w + j;
            std::uint8_t e = mask[p];
            if (i > 0) e &= mask[p - w];
            if (i + 1 < h) e &= mask[p + w];
            if (j > 0) e &= mask[p - 1];
            if (j + 1 < w) e &= mask[p + 1];
            out[p] = mask[p] ^ e;
        }
    return out;
}

inline io::Image mask_image(const std::vector<std::uint8_t>& mask, std::size_t h, std::size_t w) {
    io::Image img(w, h, 1);
    for (std::size_t i = 0; i < mask.size(); ++i) img.pixels[i] = mask[i] ? 255 : 0;
    return img;
}

/// FULL projection in gray; prediction boundary red, label boundary blue (purple where both).
inline io::Image overlay_image(const data::SampleRecord& s, const std::vector<std::uint8_t>& pred_mask, bool with_label) {
    const std::size_t h = s.height(), w = s.width();
    const auto pred_edge = boundary(pred_mask, h, w);
    std::vector<std::uint8_t> label_edge;
    if (with_label) {
        std::vector<std::uint8_t> label(h * w);
        for (std::size_t i = 0; i < h * w; ++i) label[i] = s.target[i] > 0.5f;
        label_edge = boundary(label, h, w);
    }
    io::Image img(w, h, 3);
    for (std::size_t i = 0; i < h * w; ++i) {
        const auto g = static_cast<std::uint8_t>(std::lround(std::clamp(s.input[i], 0.0f, 1.0f) * 255.0f));
        std::uint8_t rgb[3] = {g, g, g};
        const bool red = pred_edge[i], blue = with_label && label_edge[i];
        if (red || blue) rgb[0] = red ? 255 : 0, rgb[1] = 0, rgb[2] = blue ? 255 : 0;
        for (std::size_t c = 0; c < 3; ++c) img.pixels[i * 3 + c] = rgb[c];
    }
    return img;
}

struct PredictOutcome {
    int id = 0;
    std::string error;  // empty on success
    std::filesystem::path mask, overlay;
};

/// Writes <id>_mask.png and <id>_overlay.png per sample. A failing sample is reported and skipped.
inline std::vector<PredictOutcome> predict(const SegmentationModel<float>& model, const std::filesystem::path& root,
                                           data::Subset subset, data::Task task, const std::vector<int>& ids,
                                           const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::vector<PredictOutcome> outcomes;
    for (int id : ids) {
        PredictOutcome o{id, {}, out_dir / (std::to_string(id) + "_mask.png"), out_dir / (std::to_string(id) + "_overlay.png")};
        try {
            const bool has_label = std::filesystem::is_regular_file(data::label_path(root, subset, task, id));
            data::SampleRecord s;
            if (has_label) {
                s = data::load_sample(root, subset, task, id);
            } else {
                // Unlabelled: read the projections alone.
                s.id = id;
                std::vector<io::Image> planes;
                for (const auto& layer : data::projection_layers())
                    planes.push_back(data::detail::read_required(data::projection_path(root, subset, layer, id)));
                const std::size_t h = planes[0].height, w = planes[0].width;
                s.input = Tensor<float>({3, h, w});
                s.target = Tensor<float>({1, h, w});
                for (std::size_t c = 0; c < 3; ++c) {
                    if (planes[c].height != h || planes[c].width != w)
                        throw data::DataError("sample " + std::to_string(id) + ": projection extents differ");
                    for (std::size_t i = 0; i < h * w; ++i) s.input[c * h * w + i] = planes[c].pixels[i] / 255.0f;
                }
            }
            const auto mask = binarize(predict_probabilities(model, s));
            io::write(o.mask, mask_image(mask, s.height(), s.width()));
            io::write(o.overlay, overlay_image(s, mask, has_label));
        } catch (const std::exception& e) {
            o.error = e.what();
        }
        outcomes.push_back(std::move(o));
    }
    return outcomes;
}

}  // namespace ssw::train
