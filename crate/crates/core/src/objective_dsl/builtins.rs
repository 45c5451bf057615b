use crate::loss_catalog::{LossId, Variant};

const RHO: &str = "let rho = (pcl - prl) - (rcl - rrl)\n";

/// Source text of a catalog loss in the objective language.
///
/// The corrected variant binds `z = beta * rho / 0.05` and feeds it to the
/// intermediate sigmoids and statistics; the as-discovered variant feeds
/// `rho` directly.
pub fn builtin_source(id: LossId, variant: Variant) -> String {
    let (z_binding, z) = match variant {
        Variant::AsDiscovered => ("", "rho"),
        Variant::BetaCorrected => ("let z = beta * rho / 0.05\n", "z"),
    };
    let body = match id {
        LossId::Dpo => return format!("{RHO}-logsigmoid(beta * rho)\n"),
        LossId::Slic => return format!("{RHO}relu(1 - beta * rho)\n"),
        LossId::Exp => return format!("{RHO}exp(-beta * rho)\n"),
        LossId::Ipo => return format!("{RHO}pow(rho - 1 / (2 * beta), 2)\n"),
        LossId::KtoPair => {
            return "\
let chosen_logratios = pcl - rcl
let rejected_logratios = prl - rrl
let chosen_kl = clamp_min(mean(chosen_logratios), 0)
let rejected_kl = clamp_min(mean(rejected_logratios), 0)
concat(1 - sigmoid(beta * (chosen_logratios - rejected_kl)), 1 - sigmoid(beta * (chosen_kl - rejected_logratios)))
"
            .to_owned()
        }
        LossId::Cell => {
            return format!(
                "{RHO}\
let exp_losses = exp(-beta * rho)
let log_losses = -logsigmoid(beta * rho)
0.5 * exp_losses + (1 - 0.5) * log_losses
"
            )
        }
        LossId::Lrml => format!(
            "\
let logistic_component = -logsigmoid(beta * rho)
let exp_component = exp(-beta * rho)
let modulation = sigmoid({z})
modulation * exp_component + (1 - modulation) * logistic_component
"
        ),
        LossId::Padll => format!(
            "\
let mismatches = indicator_lt({z}, 0)
let decay = 0.9 * (1 - mismatches * 0.5)
decay * -logsigmoid(beta * rho)
"
        ),
        LossId::Pfl => format!(
            "\
let correct = indicator_gt(pcl, prl)
let logistic_losses = -logsigmoid({z})
let hinge_losses = relu(1 - {z})
where(correct, logistic_losses / 2, hinge_losses * 2)
"
        ),
        LossId::Dbaql => format!(
            "\
let dynamic_blend_coeff = sigmoid(var({z})) * 1.0
let logistic_loss = -logsigmoid(beta * rho / 0.9)
let exp_loss = exp(-beta * rho * 0.9)
dynamic_blend_coeff * logistic_loss + (1 - dynamic_blend_coeff) * exp_loss
"
        ),
        LossId::Aql => {
            let weights = match variant {
                Variant::AsDiscovered => "sigmoid(-beta * (rho - moving_quantile))",
                Variant::BetaCorrected => "sigmoid(0.05 * moving_quantile - beta * rho)",
            };
            format!(
                "\
let moving_quantile = 0.5 + 0.01 * (sigmoid(mean({z})) - 0.5)
let quantile_weights = {weights}
let logistic_losses = -logsigmoid(beta * rho)
let hinge_losses = relu(1 - beta * rho)
quantile_weights * logistic_losses + (1 - quantile_weights) * hinge_losses
"
            )
        }
        LossId::Aqfl => format!(
            "\
let spread = std({z})
let base_quantile = spread * mean(sigmoid(-{z}))
let adaptive_quantile = base_quantile + 0.05 * (sigmoid(mean({z})) - base_quantile)
let blend_rate = sigmoid(0.1 * abs({z} - adaptive_quantile))
let logistic_losses = -logsigmoid(beta * rho)
let hinge_losses = relu(1 - beta * rho)
blend_rate * logistic_losses + (1 - blend_rate) * hinge_losses
"
        ),
    };
    format!("{RHO}{z_binding}{body}")
}
