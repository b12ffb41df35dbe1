#pragma once

#include "qalam/data.hpp"
#include "qalam/error.hpp"
#include "qalam/serialize.hpp"
#include "qalam/strokes.hpp"
#include "qalam/train.hpp"

#include "httplib.h"
#include "json.hpp"

#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace qalam::service {

using json = nlohmann::ordered_json;

inline constexpr std::string_view api_version = "v1";

struct response {
    int status{ 200 };
    json body;
};

/// Request handling independent of the HTTP transport. Loaded models are
/// published as immutable snapshots, so handlers never take a lock.
class inference_service {
  public:
    explicit inference_service(const stroke_group_table &table = stroke_group_table::standard()) :
        table_{ table } {}

    void set_single(trained_bundle bundle) {
        auto next = std::make_shared<snapshot>(current() ? *current() : snapshot{});
        next->single = std::make_shared<const trained_bundle>(std::move(bundle));
        publish(std::move(next));
    }

    void set_multi(multi_model_bundle bundle) {
        auto next = std::make_shared<snapshot>(current() ? *current() : snapshot{});
        next->multi = std::make_shared<const multi_model_bundle>(std::move(bundle));
        publish(std::move(next));
    }

    /// Until called, /v1/health reports "loading".
    void mark_ready() { ready_.store(true); }

    [[nodiscard]] response health() const {
        const auto s = current();
        json body;
        body["status"] = ready_.load() ? "ready" : "loading";
        body["api"] = api_version;
        body["model_format_version"] = model_format_version;
        body["group_table_version"] = table_.version();
        body["single_model"] = s && s->single != nullptr;
        json groups = json::array();
        if (s && s->multi) {
            for (const auto &[id, model] : s->multi->models) {
                groups.push_back(id);
            }
        }
        body["group_models"] = groups;
        return { 200, body };
    }

    [[nodiscard]] response labels() const {
        const auto s = current();
        const label_map &map = s && s->single ? s->single->labels : table_.labels();
        json names = json::array();
        for (const std::string &n : map.names()) {
            names.push_back(n);
        }
        return { 200, json{ { "count", map.size() }, { "labels", names } } };
    }

    [[nodiscard]] response groups() const {
        json groups = json::array();
        for (const stroke_group &g : table_.groups()) {
            groups.push_back(json{ { "id", g.id }, { "strokes", g.id }, { "size", g.classes.size() }, { "classes", g.classes } });
        }
        return { 200, json{ { "version", table_.version() }, { "groups", groups } } };
    }

    [[nodiscard]] response predict(const std::string_view body_text) const {
        json request;
        try {
            request = json::parse(body_text);
        } catch (const json::parse_error &e) {
            return fail(400, std::string{ "malformed JSON: " } + e.what());
        }
        if (!request.is_object()) {
            return fail(400, "request body must be a JSON object");
        }
        image pixels{};
        if (auto problem = parse_image(request, pixels)) {
            return fail(400, *problem);
        }
        std::string mode = "single";
        if (request.contains("mode")) {
            if (!request["mode"].is_string() || (request["mode"] != "single" && request["mode"] != "multi")) {
                return fail(400, "mode must be \"single\" or \"multi\"");
            }
            mode = request["mode"].get<std::string>();
        }
        std::optional<int> strokes;
        if (request.contains("strokes") && !request["strokes"].is_null()) {
            const json &s = request["strokes"];
            if (!s.is_number_integer() || s.get<long long>() < 1 || s.get<long long>() > 1'000'000) {
                return fail(400, "strokes must be an integer >= 1");
            }
            strokes = static_cast<int>(s.get<long long>());
        }

        const auto snap = current();
        if (mode == "single") {
            if (!snap || !snap->single) {
                return fail(503, "single model not loaded");
            }
            const trained_bundle &m = *snap->single;
            const prediction p = predict_image(m.net, pixels);
            json probs = json::object();
            for (std::size_t i = 0; i < p.probabilities.size(); ++i) {
                probs[m.labels.name(i)] = p.probabilities[i];
            }
            return { 200, json{ { "label", m.labels.name(p.label) }, { "label_index", p.label }, { "probabilities", probs }, { "group", nullptr }, { "model", "single" } } };
        }

        if (!strokes) {
            return fail(400, "strokes is required in multi mode");
        }
        if (*strokes > table_.max_strokes()) {
            json body{ { "error", "stroke count " + std::to_string(*strokes) + " is not supported; valid range is 1-" + std::to_string(table_.max_strokes()) },
                       { "valid_strokes", json{ { "min", 1 }, { "max", table_.max_strokes() } } },
                       { "fallback", "single" } };
            return { 422, body };
        }
        if (!snap || !snap->multi) {
            return fail(503, "group models not loaded");
        }
        const multi_model_bundle &mb = *snap->multi;
        const stroke_group &g = mb.table.route(*strokes);
        if (mb.models.find(g.id) == mb.models.end()) {
            return fail(503, "model for group " + std::to_string(g.id) + " not loaded");
        }
        const multi_prediction p = predict_multi(mb, pixels, *strokes);
        json probs = json::object();
        for (std::size_t i = 0; i < p.probabilities.size(); ++i) {
            probs[p.classes[i]] = p.probabilities[i];
        }
        return { 200, json{ { "label", p.name }, { "label_index", p.label }, { "probabilities", probs }, { "group", p.group }, { "model", "group-" + std::to_string(p.group) } } };
    }

  private:
    struct snapshot {
        std::shared_ptr<const trained_bundle> single;
        std::shared_ptr<const multi_model_bundle> multi;
    };

    [[nodiscard]] std::shared_ptr<const snapshot> current() const { return std::atomic_load(&snapshot_); }

    void publish(std::shared_ptr<const snapshot> next) { std::atomic_store(&snapshot_, std::move(next)); }

    static prediction predict_image(const network<float> &net, const image &pixels) { return qalam::predict(net, pixels); }

    static response fail(const int status, std::string message) { return { status, json{ { "error", std::move(message) } } }; }

    // Accepts 1024 integers (row-major) or 32 rows of 32 integers, each 0..255.
    static std::optional<std::string> parse_image(const json &request, image &out) {
        if (!request.contains("image")) {
            return "missing field 'image'";
        }
        const json &img = request["image"];
        if (!img.is_array()) {
            return "'image' must be an array";
        }
        std::vector<const json *> values;
        if (!img.empty() && img.front().is_array()) {
            if (img.size() != image_side) {
                return "2-D image must have " + std::to_string(image_side) + " rows";
            }
            for (const json &row : img) {
                if (!row.is_array() || row.size() != image_side) {
                    return "every image row must have " + std::to_string(image_side) + " values";
                }
                for (const json &v : row) {
                    values.push_back(&v);
                }
            }
        } else {
            for (const json &v : img) {
                values.push_back(&v);
            }
        }
        if (values.size() != image_pixels) {
            return "image must have exactly " + std::to_string(image_pixels) + " pixels, got " + std::to_string(values.size());
        }
        for (std::size_t i = 0; i < image_pixels; ++i) {
            const json &v = *values[i];
            if (!v.is_number()) {
                return "pixel " + std::to_string(i) + " is not a number";
            }
            const double d = v.get<double>();
            if (d != std::floor(d) || d < 0.0 || d > 255.0) {
                return "pixel " + std::to_string(i) + " must be an integer in 0..255";
            }
            out[i] = static_cast<std::uint8_t>(d);
        }
        return std::nullopt;
    }

    const stroke_group_table &table_;
    std::shared_ptr<const snapshot> snapshot_;
    std::atomic<bool> ready_{ false };
};

/// Binds the service's endpoints onto an HTTP server. CORS is open so the
/// drawing UI can be served from any origin.
inline void install_routes(httplib::Server &server, const inference_service &svc) {
    server.set_default_headers({ { "Access-Control-Allow-Origin", "*" },
                                 { "Access-Control-Allow-Methods", "GET, POST, OPTIONS" },
                                 { "Access-Control-Allow-Headers", "Content-Type" } });
    const auto send = [](httplib::Response &res, const response &r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    server.Get("/v1/health", [&svc, send](const httplib::Request &, httplib::Response &res) { send(res, svc.health()); });
    server.Get("/v1/labels", [&svc, send](const httplib::Request &, httplib::Response &res) { send(res, svc.labels()); });
    server.Get("/v1/groups", [&svc, send](const httplib::Request &, httplib::Response &res) { send(res, svc.groups()); });
    server.Post("/v1/predict", [&svc, send](const httplib::Request &req, httplib::Response &res) { send(res, svc.predict(req.body)); });
    server.Options(R"(/v1/.*)", [](const httplib::Request &, httplib::Response &res) { res.status = 204; });
}

}  // namespace qalam::service
