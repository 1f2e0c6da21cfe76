#include "ursct/image_io.hpp"

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "ursct/errors.hpp"

namespace ursct {

namespace {

Tensor<float> to_chw(const std::vector<unsigned char>& rgb, std::int64_t h, std::int64_t w) {
    auto t = Tensor<float>::zeros({3, h, w});
    float* out = t.mutable_data().data();
    const std::int64_t plane = h * w;
    for (std::int64_t i = 0; i < plane; ++i) {
        out[i] = static_cast<float>(rgb[static_cast<std::size_t>(3 * i)]) / 255.0f;
        out[plane + i] = static_cast<float>(rgb[static_cast<std::size_t>(3 * i + 1)]) / 255.0f;
        out[2 * plane + i] = static_cast<float>(rgb[static_cast<std::size_t>(3 * i + 2)]) / 255.0f;
    }
    return t;
}

Tensor<float> load_png(const std::string& path) {
    png_image im;
    std::memset(&im, 0, sizeof(im));
    im.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&im, path.c_str())) {
        std::string msg = im.message;
        png_image_free(&im);
        throw IoError("cannot read PNG '" + path + "': " + msg);
    }
    im.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> rgb(PNG_IMAGE_SIZE(im));
    if (!png_image_finish_read(&im, nullptr, rgb.data(), 0, nullptr)) {
        std::string msg = im.message;
        png_image_free(&im);
        throw IoError("cannot decode PNG '" + path + "': " + msg);
    }
    const auto h = static_cast<std::int64_t>(im.height);
    const auto w = static_cast<std::int64_t>(im.width);
    png_image_free(&im);
    return to_chw(rgb, h, w);
}

struct JpegErr {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_throw(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErr*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

Tensor<float> load_jpeg(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open '" + path + "'");

    jpeg_decompress_struct cinfo;
    JpegErr err;
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_throw;
    // No C++ objects are constructed between setjmp and the throw below.
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        std::fclose(f);
        throw IoError("cannot decode JPEG '" + path + "': " + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f);
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);

    const auto h = static_cast<std::int64_t>(cinfo.output_height);
    const auto w = static_cast<std::int64_t>(cinfo.output_width);
    std::vector<unsigned char> rgb(static_cast<std::size_t>(3 * h * w));
    while (cinfo.output_scanline < cinfo.output_height) {
        unsigned char* row = rgb.data() + static_cast<std::size_t>(3 * w) * cinfo.output_scanline;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    std::fclose(f);
    return to_chw(rgb, h, w);
}

}  // namespace

Tensor<float> load_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    unsigned char magic[8] = {};
    in.read(reinterpret_cast<char*>(magic), sizeof(magic));
    in.close();

    static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (std::memcmp(magic, png_sig, 8) == 0) return load_png(path);
    if (magic[0] == 0xff && magic[1] == 0xd8) return load_jpeg(path);
    throw IoError("unsupported image format for '" + path + "' (expected PNG or JPEG)");
}

void save_image(const Tensor<float>& image, const std::string& path) {
    if (image.ndim() != 3 || image.dim(0) != 3) {
        throw DimensionError("save_image expects [3,H,W], got " + shape_str(image.shape()));
    }
    const std::int64_t h = image.dim(1), w = image.dim(2), plane = h * w;
    const float* src = image.data().data();
    std::vector<unsigned char> rgb(static_cast<std::size_t>(3 * plane));
    for (std::int64_t i = 0; i < plane; ++i) {
        for (int c = 0; c < 3; ++c) {
            float v = src[c * plane + i];
            v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
            rgb[static_cast<std::size_t>(3 * i + c)] =
                static_cast<unsigned char>(std::floor(v * 255.0f + 0.5f));
        }
    }

    png_image im;
    std::memset(&im, 0, sizeof(im));
    im.version = PNG_IMAGE_VERSION;
    im.width = static_cast<png_uint_32>(w);
    im.height = static_cast<png_uint_32>(h);
    im.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&im, path.c_str(), 0, rgb.data(), 0, nullptr)) {
        std::string msg = im.message;
        png_image_free(&im);
        throw IoError("cannot write PNG '" + path + "': " + msg);
    }
}

}  // namespace ursct
