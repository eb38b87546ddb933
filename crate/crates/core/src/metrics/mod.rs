//! Per-model measurements and the composite CE score.

mod ce;
mod lexical;
mod lexicon;
mod row;
mod similarity;

pub use ce::{
    calibrate_weights, ce_score, correlation, sensitivity_analysis, weight_grid, Calibration,
    CeInputs, CeWeights, Correlation, Perturbation, SensitivityReport,
};
pub use lexical::{avg_length, cooccurrence_rate, keyword_frequency, ttr, LexicalProfile};
pub use lexicon::KeywordLexicon;
pub use row::{
    evaluate_model, improvement_report, read_metrics_csv, read_per_question_csv, write_metrics_csv,
    write_per_question_csv, EvaluationContext, Improvement, MetricRow, ModelEvaluation,
    QuestionMetrics, METRICS_HEADER, PER_QUESTION_HEADER,
};
pub use similarity::{cosine_similarity, semantic_similarity, semantic_similarity_per_question, sentiment_diff};
