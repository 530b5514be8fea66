#pragma once

#include <json.hpp>

#include "wgsr/imaging.hpp"
#include "wgsr/physics.hpp"

namespace wgsr {

using json = nlohmann::json;

inline void to_json(json& j, const WaveguideModel& m) {
    j = json{{"c0", m.c0}, {"depth", m.depth}};
}
inline void from_json(const json& j, WaveguideModel& m) {
    j.at("c0").get_to(m.c0);
    j.at("depth").get_to(m.depth);
}

inline void to_json(json& j, const FrequencyGrid& g) {
    j = json{{"f_center", g.f_center}, {"bandwidth", g.bandwidth}, {"n_freq", g.n_freq}};
}
inline void from_json(const json& j, FrequencyGrid& g) {
    j.at("f_center").get_to(g.f_center);
    j.at("bandwidth").get_to(g.bandwidth);
    j.at("n_freq").get_to(g.n_freq);
}

inline void to_json(json& j, const ArrayGeometry& a) {
    j = json{{"x_position", a.x_position}, {"receiver_y", a.receiver_y}};
}
inline void from_json(const json& j, ArrayGeometry& a) {
    j.at("x_position").get_to(a.x_position);
    j.at("receiver_y").get_to(a.receiver_y);
}

inline void to_json(json& j, const SearchGrid& g) {
    j = json{{"x_min", g.x_min}, {"x_max", g.x_max}, {"y_min", g.y_min},
             {"y_max", g.y_max}, {"n_x", g.n_x},     {"n_y", g.n_y}};
}
inline void from_json(const json& j, SearchGrid& g) {
    j.at("x_min").get_to(g.x_min);
    j.at("x_max").get_to(g.x_max);
    j.at("y_min").get_to(g.y_min);
    j.at("y_max").get_to(g.y_max);
    j.at("n_x").get_to(g.n_x);
    j.at("n_y").get_to(g.n_y);
}

inline void to_json(json& j, const Point& p) { j = json{{"x", p.x}, {"y", p.y}}; }
inline void from_json(const json& j, Point& p) {
    j.at("x").get_to(p.x);
    j.at("y").get_to(p.y);
}

} // namespace wgsr
