#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "slpt/codec/point_cloud.hpp"
#include "slpt/diffcore/checkpoint.hpp"
#include "slpt/geometry/camera.hpp"

namespace slpt::harness {

inline std::uint8_t to_byte(double v)
{
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Nearest single-precision value. g++ 11 at -O3 folds a plain
// double->float->double cast pair, so the float goes through memory.
inline double round_to_float(double v)
{
    volatile float f = static_cast<float>(v);
    return f;
}

// ASCII PLY with float x y z and uchar red green blue.
template <class T>
void write_ply(const std::filesystem::path& path, const PointCloud<T>& pc)
{
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "ply\nformat ascii 1.0\nelement vertex " << pc.size()
       << "\nproperty float x\nproperty float y\nproperty float z\n"
          "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
    os << std::setprecision(9);
    for (std::size_t i = 0; i < pc.size(); ++i) {
        os << static_cast<float>(pc.coords(i, 0)) << ' ' << static_cast<float>(pc.coords(i, 1)) << ' '
           << static_cast<float>(pc.coords(i, 2));
        for (std::size_t c = 0; c < 3; ++c) os << ' ' << static_cast<int>(to_byte(static_cast<double>(pc.colors(i, c))));
        os << '\n';
    }
    if (!os) throw IoError("write failed: " + path.string());
}

// Reads ASCII PLY vertices with x y z and optional red green blue (uchar,
// scaled to [0,1], or float). Other vertex properties are skipped.
template <class T>
PointCloud<T> read_ply(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw IoError("cannot open for reading: " + path.string());
    std::string line;
    if (!std::getline(is, line) || line != "ply") throw InputError("not a PLY file: " + path.string());
    std::size_t count = 0;
    bool in_vertex = false, ascii = false;
    std::vector<std::string> props, types;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            ascii = fmt == "ascii";
        } else if (word == "element") {
            std::string name;
            ls >> name;
            in_vertex = name == "vertex";
            if (in_vertex) ls >> count;
        } else if (word == "property" && in_vertex) {
            std::string type, name;
            ls >> type >> name;
            if (type == "list") throw InputError("list properties on vertices are not supported: " + path.string());
            types.push_back(type);
            props.push_back(name);
        } else if (word == "end_header") {
            break;
        }
    }
    if (!ascii) throw InputError("only ASCII PLY is supported: " + path.string());
    auto find = [&](const std::string& name) {
        for (std::size_t i = 0; i < props.size(); ++i)
            if (props[i] == name) return static_cast<int>(i);
        return -1;
    };
    const int ix = find("x"), iy = find("y"), iz = find("z");
    const int ir = find("red"), ig = find("green"), ib = find("blue");
    if (ix < 0 || iy < 0 || iz < 0) throw InputError("PLY vertices need x, y, z: " + path.string());
    PointCloud<T> pc;
    pc.coords = Tensor<T>::matrix(count, 3);
    pc.colors = Tensor<T>::matrix(count, 3);
    // Values go through their declared width so float data reads back exactly.
    auto narrow = [&](std::size_t k, double v) {
        return types[k] == "float" || types[k] == "float32" ? round_to_float(v) : v;
    };
    std::vector<double> vals(props.size());
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t k = 0; k < vals.size(); ++k) {
            if (!(is >> vals[k])) throw InputError("truncated PLY vertex data: " + path.string());
            vals[k] = narrow(k, vals[k]);
        }
        pc.coords(i, 0) = static_cast<T>(vals[static_cast<std::size_t>(ix)]);
        pc.coords(i, 1) = static_cast<T>(vals[static_cast<std::size_t>(iy)]);
        pc.coords(i, 2) = static_cast<T>(vals[static_cast<std::size_t>(iz)]);
        const int rgb[3] = {ir, ig, ib};
        for (std::size_t c = 0; c < 3; ++c) {
            if (rgb[c] < 0) continue;
            const auto k = static_cast<std::size_t>(rgb[c]);
            const bool byte = types[k] == "uchar" || types[k] == "uint8";
            pc.colors(i, c) = static_cast<T>(byte ? vals[k] / 255.0 : vals[k]);
        }
    }
    pc.validate();
    return pc;
}

// Binary PPM (P6, maxval 255) from a {H*W,3} row-major image in [0,1].
template <class T>
void write_ppm(const std::filesystem::path& path, const Tensor<T>& rgb, int width, int height)
{
    require(rgb.rows() == static_cast<std::size_t>(width) * static_cast<std::size_t>(height) && rgb.cols() == 3,
            "write_ppm: image must be {H*W,3}");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "P6\n" << width << ' ' << height << "\n255\n";
    std::vector<std::uint8_t> bytes(rgb.size());
    for (std::size_t i = 0; i < rgb.size(); ++i) bytes[i] = to_byte(static_cast<double>(rgb[i]));
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed: " + path.string());
}

template <class T>
Tensor<T> read_ppm(const std::filesystem::path& path, int& width, int& height)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path.string());
    std::string magic;
    int maxval = 0;
    is >> magic >> width >> height >> maxval;
    if (magic != "P6" || width <= 0 || height <= 0 || maxval != 255) throw InputError("unsupported PPM: " + path.string());
    is.get();
    const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    std::vector<std::uint8_t> bytes(n * 3);
    if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
        throw InputError("truncated PPM: " + path.string());
    Tensor<T> out = Tensor<T>::matrix(n, 3);
    for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = static_cast<T>(bytes[i] / 255.0);
    return out;
}

struct CameraRecord {
    geometry::CameraModel model;
    bool heldout = false;
};

inline void write_cameras(const std::filesystem::path& path, const std::vector<CameraRecord>& cams)
{
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t k = 0; k < cams.size(); ++k) {
        const auto& c = cams[k].model;
        arr.push_back({{"index", k},
                       {"split", cams[k].heldout ? "heldout" : "train"},
                       {"fx", c.fx},
                       {"fy", c.fy},
                       {"cx", c.cx},
                       {"cy", c.cy},
                       {"width", c.width},
                       {"height", c.height},
                       {"z_near", c.z_near},
                       {"world_to_camera", c.w2c_row_major()}});
    }
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << nlohmann::json{{"cameras", arr}}.dump(2) << '\n';
    if (!os) throw IoError("write failed: " + path.string());
}

inline std::vector<CameraRecord> read_cameras(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw IoError("cannot open for reading: " + path.string());
    std::vector<CameraRecord> out;
    try {
        const auto j = nlohmann::json::parse(is);
        for (const auto& e : j.at("cameras")) {
            CameraRecord r;
            r.heldout = e.at("split").get<std::string>() == "heldout";
            auto& c = r.model;
            c.fx = e.at("fx");
            c.fy = e.at("fy");
            c.cx = e.at("cx");
            c.cy = e.at("cy");
            c.width = e.at("width");
            c.height = e.at("height");
            c.z_near = e.at("z_near");
            const auto m = e.at("world_to_camera").get<std::vector<double>>();
            if (m.size() != 16) throw InputError("world_to_camera must have 16 entries");
            for (int i = 0; i < 16; ++i) c.world_to_camera(i / 4, i % 4) = m[static_cast<std::size_t>(i)];
            c.validate();
            out.push_back(r);
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError("bad cameras file " + path.string() + ": " + e.what());
    } catch (const ContractViolation& e) {
        throw InputError("bad camera in " + path.string() + ": " + e.what());
    }
    return out;
}

inline std::string view_file(std::size_t k, const std::string& kind, const std::string& ext)
{
    return "view_" + std::to_string(k) + "_" + kind + "." + ext;
}

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << text;
    if (!os) throw IoError("write failed: " + path.string());
}

} // namespace slpt::harness
