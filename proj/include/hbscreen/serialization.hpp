#pragma once

// JSON shapes shared by the CLI, the service API and the event log.

#include <json.hpp>

#include "hbscreen/clinical.hpp"
#include "hbscreen/features.hpp"
#include "hbscreen/models.hpp"
#include "hbscreen/pipeline.hpp"
#include "hbscreen/reports.hpp"

namespace hbscreen {

using json = nlohmann::json;

json to_json(const Demographics& d);
// Throws InvalidArgument on missing or mistyped fields.
Demographics demographics_from_json(const json& j);

json to_json(const FeatureVector& f);
FeatureVector feature_vector_from_json(const json& j);

json to_json(const CalibrationParams& c);
CalibrationParams calibration_from_json(const json& j);

json to_json(const LabReport& r);
LabReport lab_report_from_json(const json& j);

json to_json(const ScreeningOutcome& s);
ScreeningOutcome screening_from_json(const json& j);

json to_json(const EvalMetrics& m);
std::string metrics_csv(const EvalMetrics& m);
std::string predictions_csv(const std::vector<SamplePrediction>& p);

json bundle_summary(const ModelBundle& b);

}  // namespace hbscreen
