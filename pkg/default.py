# -*- coding: utf-8 -*-
import sys
import getopt
from helpers.models import ConfigError, LEVELS, ModelConfig
from helpers.setting_helper import build_model_config, config_mapping, load_config_file,\
    set_config, set_config_from_cmd
from helpers.stage_helper import EXIT_USAGE, STAGE_FUNCS, restart_failures_log, run_subcommand
from stages.utils import RunLayout, StageOptions


class CommandLineOptions: # pylint: disable=too-many-instance-attributes,missing-class-docstring
    subcommand = ''
    output_filename = ''
    input_filename = ''
    setting_filename = ''
    config_filename = ''
    from_checkpoint = ''
    input_skip = 0
    input_take = -1
    level = None
    n = None

    def show_help(self, _):
        """
        Prints the usage, every setting with its default and exits.
        """
        print(main.__doc__)
        self.show_available_settings()
        sys.exit()

    def show_available_settings(self):
        """
        Display valid settings, their aliases and default values.
        """
        print()
        print('Valid settings (default value):')
        defaults = dict(ModelConfig.dotted_defaults())
        for aliases, value in config_mapping.items():
            value_type, name = value.split('|', maxsplit=1)
            value_desc = 'value'
            if 'bool' in value_type:
                value_desc = 'true/false'
            elif 'int' in value_type:
                value_desc = 'whole number'
            elif 'float' in value_type:
                value_desc = 'number'
            elif 'string' in value_type:
                value_desc = 'string value'
            default = str(defaults[name]).lower() if value_type == 'bool' else defaults[name]
            print(f"--setting {name}=<{value_desc}> ( alias: {aliases[0]}, default: {default} )")
        print()

    def usage_error(self, message):
        print(message)
        print(main.__doc__)
        sys.exit(EXIT_USAGE)

    def parse_int(self, arg, flag, minimum=None):
        try:
            value = int(arg)
        except (TypeError, ValueError):
            self.usage_error(f'{flag} has to be a whole number, got "{arg}"')
        if minimum is not None and value < minimum:
            self.usage_error(f'{flag} has to be >= {minimum}, got {value}')
        return value

    def set_input_skip(self, arg):
        self.input_skip = self.parse_int(arg, '--input-skip', 0)

    def set_input_take(self, arg):
        self.input_take = self.parse_int(arg, '--input-take')

    def set_n(self, arg):
        self.n = self.parse_int(arg, '--n', 0)

    def set_level(self, arg):
        if arg not in LEVELS:
            self.usage_error(f'--level has to be one of {", ".join(LEVELS)}, got "{arg}"')
        self.level = arg

    def set_setting(self, arg):
        """
        Set a configuration value for this run from "<setting_name>=<value>".
        Unknown names and unparsable values list the valid settings and exit.
        """
        if not set_config_from_cmd(arg):
            print(f'Invalid setting "{arg}"')
            self.show_available_settings()
            sys.exit(EXIT_USAGE)

    def set_seed(self, arg):
        self.set_setting(f'general.seed={arg}')

    def set_steps(self, arg):
        self.set_setting(f'sampler.steps={arg}')

    def set_cfg_scale(self, arg):
        self.set_setting(f'sampler.cfg-scale={arg}')

    def set_key(self, arg):
        self.set_setting(f'ablation.key={arg}')

    def enable_capture_daam(self, _):
        self.set_setting('sampler.capture-daam=true')

    def set_config_filename(self, arg):
        self.config_filename = arg

    def set_from_checkpoint(self, arg):
        self.from_checkpoint = arg

    def set_output_filename(self, arg):
        self.output_filename = arg

    def set_input_filename(self, arg):
        self.input_filename = arg

    def save_setting(self, arg):
        """
        Specifies what filename to use when saving the effective settings.
        """
        self.setting_filename = arg

    def handle_option(self, opt, arg):
        """
        Handles the provided option by calling the matching handler.
        """
        option_handlers = {
            ("-h", "--help"): self.show_help,
            ("-c", "--config"): self.set_config_filename,
            ("--seed",): self.set_seed,
            ("--steps",): self.set_steps,
            ("--cfg-scale",): self.set_cfg_scale,
            ("-l", "--level"): self.set_level,
            ("-k", "--key"): self.set_key,
            ("-n", "--n"): self.set_n,
            ("--capture-daam",): self.enable_capture_daam,
            ("--from-checkpoint",): self.set_from_checkpoint,
            ("-i", "--input"): self.set_input_filename,
            ("--is", "--input-skip"): self.set_input_skip,
            ("--it", "--input-take"): self.set_input_take,
            ("-o", "--output"): self.set_output_filename,
            ("-s", "--setting"): self.set_setting,
            ("--ss", "--save-setting"): self.save_setting
        }

        for options, handler in option_handlers.items():
            if opt in options:
                handler(arg)
                return

    def to_stage_options(self, config):
        return StageOptions(
            config=config,
            layout=RunLayout(config.general.output),
            level=self.level,
            n=self.n,
            input_filename=self.input_filename,
            input_skip=self.input_skip,
            input_take=self.input_take,
            output_filename=self.output_filename,
            from_checkpoint=self.from_checkpoint)


def main(argv):
    """
    Toy latent diffusion super-resolution

    Usage:
    default.py <subcommand> [options]

    Subcommands (in pipeline order):
    synth-data\t\t\t: build the train split and one validation split per level
    train-vae\t\t\t: pretrain the autoencoder
    train-prior\t\t\t: pretrain the text-conditioned latent diffusion prior
    pretrain-align\t\t: train the alignment module alone
    finetune\t\t\t: jointly fine-tune LQ encoder, alignment module and denoiser
    infer\t\t\t: restore one LQ image to PPM
    eval\t\t\t: PSNR/SSIM of a validation split against the LQ baseline
    daam\t\t\t: cross-attention heatmaps and the mask-mass statistic
    ablate\t\t\t: train an ablation variant and compare it with the full model

    Options and arguments:
    -h/--help\t\t\t: usage and every setting with its default
    -c/--config <file path>\t: JSON settings file (overrides settings.json)
    --seed <number>\t\t: root seed of every random stream
    --steps <number>\t\t: sampling steps
    --cfg-scale <number>\t: classifier-free guidance scale
    -l/--level <I|II|III>\t: degradation level (default II, synth-data: all)
    -k/--key <ablation>\t\t: ablation key
    -n/--n <number>\t\t: split size for synth-data
    --capture-daam\t\t: record cross-attention while sampling
    --from-checkpoint <dir>\t: start from (or restore with) this checkpoint
    -i/--input <file path>\t: input image for infer (.ppm/.ftnsr)
    --is/--input-skip <number>\t: skip the first items of a split
    --it/--input-take <number>\t: use at most this many items of a split
    -o/--output <file path>\t: output file (report: .txt/.json/.csv/.md, infer: .ppm)
    -s/--setting <key>=<value>\t: override configuration for current run
    --ss/--save-setting <file path>\t: write the effective configuration as JSON
    """

    options = CommandLineOptions()

    try:
        opts, args = getopt.gnu_getopt(argv, "hc:l:k:n:i:o:s:", [
                                   "help", "config=", "seed=", "steps=", "cfg-scale=",
                                   "level=", "key=", "n=", "capture-daam",
                                   "from-checkpoint=", "input=", "output=",
                                   "is=", "input-skip=", "it=", "input-take=",
                                   "setting=", "ss=", "save-setting="])
    except getopt.GetoptError as ex:
        options.usage_error(f'Error: {ex}')

    if len(opts) == 0 and len(args) == 0:
        options.show_help(None)

    for opt, arg in opts:
        options.handle_option(opt, arg)

    if len(args) > 1:
        options.usage_error(f'Only one subcommand per run, got {" ".join(args)}')
    if len(args) == 1:
        options.subcommand = args[0]
        if options.subcommand not in STAGE_FUNCS:
            options.usage_error(f'Unknown subcommand "{options.subcommand}"')

    try:
        if options.config_filename != '':
            load_config_file(options.config_filename)
        config = build_model_config()
        if options.setting_filename != '':
            set_config(options.setting_filename)
    except ConfigError as ex:
        print(f'Error: {ex}')
        sys.exit(EXIT_USAGE)

    if options.subcommand == '':
        if options.setting_filename == '':
            options.usage_error('No subcommand given')
        sys.exit(0)

    restart_failures_log()
    sys.exit(run_subcommand(options.subcommand, options.to_stage_options(config)))

if __name__ == '__main__':
    main(sys.argv[1:])
