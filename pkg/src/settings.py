from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

# Local overrides, e.g. LRLENS_WORKERS=4
dot_env_path = Path(__file__).parent / 'lrlens.env'


class EnvSettings(BaseSettings):
    model_config = SettingsConfigDict(env_file=dot_env_path,
                                      env_file_encoding='utf-8',
                                      env_prefix='lrlens_',
                                      extra='ignore')

    workers: int = Field(default=1, ge=1)
    log_level: str = 'INFO'
    database_name: str = 'metrics.sqlite'


settings = EnvSettings()
